// JSON op protocol spoken by the bridge. Every request carrying an id gets
// at least one reply with the same id; errors arrive as status frames.
export function zeroTwist() {
    return { linear: { x: 0, y: 0, z: 0 }, angular: { x: 0, y: 0, z: 0 } };
}
