/**
 * Sequence-numbered response gate: out-of-order responses from superseded
 * requests are dropped so the UI never shows a stale logit over a newer one.
 */
export class LatestGate<T> {
  private issued = 0;
  private applied = 0;

  /** Run `work`, delivering its result to `apply` only if no newer request
   * was issued in the meantime. Returns whether the result was applied. */
  async run(work: () => Promise<T>, apply: (value: T) => void): Promise<boolean> {
    const seq = ++this.issued;
    const value = await work();
    if (seq <= this.applied) return false;
    this.applied = seq;
    apply(value);
    return true;
  }

  /** Drop every response still in flight. */
  invalidate(): void {
    this.applied = this.issued;
  }
}
