/** Single-in-flight evaluation queue.
 *
 * Edits submitted while a run is in flight coalesce: only the newest
 * draft runs afterwards, so a burst of edits costs exactly one extra
 * evaluate call.
 */

export class EvaluationQueue<T> {
	private inFlight = false;
	private pending: T | null = null;
	private idleResolvers: (() => void)[] = [];

	constructor(
		private readonly run: (item: T) => Promise<void>,
		private readonly onError: (err: unknown) => void = () => undefined,
	) {}

	/** Enqueue the newest draft, replacing any not-yet-started one. */
	submit(item: T): void {
		if (this.inFlight) {
			this.pending = item;
			return;
		}
		void this.launch(item);
	}

	get busy(): boolean {
		return this.inFlight || this.pending !== null;
	}

	/** Resolves once no run is active and nothing is queued. */
	idle(): Promise<void> {
		if (!this.busy) return Promise.resolve();
		return new Promise((resolve) => this.idleResolvers.push(resolve));
	}

	private async launch(item: T): Promise<void> {
		this.inFlight = true;
		try {
			await this.run(item);
		} catch (err) {
			this.onError(err);
		} finally {
			this.inFlight = false;
			const next = this.pending;
			this.pending = null;
			if (next !== null) {
				void this.launch(next);
			} else {
				const resolvers = this.idleResolvers;
				this.idleResolvers = [];
				for (const resolve of resolvers) resolve();
			}
		}
	}
}
