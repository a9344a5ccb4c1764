import { describe, expect, it } from "vitest";

import { LatestGate } from "../src/latest.js";

function deferred<T>() {
  let resolve!: (value: T) => void;
  const promise = new Promise<T>((r) => (resolve = r));
  return { promise, resolve };
}

describe("LatestGate", () => {
  it("applies in-order responses", async () => {
    const gate = new LatestGate<number>();
    const seen: number[] = [];
    await gate.run(async () => 1, (v) => seen.push(v));
    await gate.run(async () => 2, (v) => seen.push(v));
    expect(seen).toEqual([1, 2]);
  });

  it("discards a stale response that resolves after a newer one", async () => {
    const gate = new LatestGate<number>();
    const seen: number[] = [];
    const slow = deferred<number>();
    const fast = deferred<number>();

    const first = gate.run(() => slow.promise, (v) => seen.push(v));
    const second = gate.run(() => fast.promise, (v) => seen.push(v));

    fast.resolve(2); // newer request returns first
    slow.resolve(1); // older response arrives late and must be dropped
    expect(await second).toBe(true);
    expect(await first).toBe(false);
    expect(seen).toEqual([2]);
  });

  it("invalidate drops everything in flight", async () => {
    const gate = new LatestGate<number>();
    const seen: number[] = [];
    const pending = deferred<number>();
    const run = gate.run(() => pending.promise, (v) => seen.push(v));
    gate.invalidate();
    pending.resolve(9);
    expect(await run).toBe(false);
    expect(seen).toEqual([]);
  });
});
