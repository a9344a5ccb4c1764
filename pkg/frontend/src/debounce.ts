export interface Debounced<A extends unknown[]> {
  (...args: A): void;
  cancel(): void;
  flush(): void;
}

type Timer = ReturnType<typeof setTimeout>;

/**
 * Trailing-edge debounce: the wrapped function runs once, with the latest
 * arguments, after the caller has been quiet for `waitMs`. This is what
 * keeps drag-scoring down to at most one request per pause.
 */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
): Debounced<A> {
  let timer: Timer | null = null;
  let pending: A | null = null;

  const debounced = (...args: A) => {
    pending = args;
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      const args = pending!;
      pending = null;
      fn(...args);
    }, waitMs);
  };
  debounced.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
    pending = null;
  };
  debounced.flush = () => {
    if (timer === null) return;
    clearTimeout(timer);
    timer = null;
    const args = pending!;
    pending = null;
    fn(...args);
  };
  return debounced;
}
