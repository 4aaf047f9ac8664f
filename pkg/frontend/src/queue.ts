/**
 * One-at-a-time task queue: a save pressed while a request is in flight is
 * queued rather than dropped, and tasks run in submission order.
 */
export class MutationQueue {
  private chain: Promise<void> = Promise.resolve();
  private pending = 0;

  get busy(): boolean {
    return this.pending > 0;
  }

  enqueue<T>(task: () => Promise<T>): Promise<T> {
    this.pending += 1;
    const run = this.chain.then(task);
    this.chain = run.then(
      () => {
        this.pending -= 1;
      },
      () => {
        this.pending -= 1;
      },
    );
    return run;
  }
}
