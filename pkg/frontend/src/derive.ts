/** Client-side derivations from service-provided values.
 *
 * Two rules hold everywhere:
 *  - displayed numbers are the exact byte spans from the response body
 *    (extracted here, never re-serialized);
 *  - the only client-side recomputation is abstention filtering from the
 *    server-provided margins: abstained = margin < threshold, and the
 *    coverage preview is a plain count. No metric is re-implemented.
 */

import type { ScoreEntry } from "./types.js";

const NUMBER_TOKEN = "(-?(?:\\d+(?:\\.\\d+)?|\\.\\d+)(?:[eE][-+]?\\d+)?)";

/** Exact byte spans of `"key": <number>` values, in document order. */
export function rawNumberTokens(rawJson: string, key: string): string[] {
	const pattern = new RegExp(`[{,]\\s*"${key}"\\s*:\\s*${NUMBER_TOKEN}`, "g");
	const out: string[] = [];
	for (const match of rawJson.matchAll(pattern)) {
		out.push(match[1] as string);
	}
	return out;
}

/** The metrics accuracy exactly as serialized by the service. */
export function displayedAccuracy(rawText: string): string {
	const tokens = rawNumberTokens(rawText, "accuracy");
	if (tokens.length === 0) throw new Error("response carries no accuracy field");
	return tokens[0] as string;
}

/** Per-image margins exactly as serialized, in score order. */
export function displayedMargins(rawText: string): string[] {
	return rawNumberTokens(rawText, "margin");
}

/** Margin-threshold abstention, recomputed client-side from server margins. */
export function recomputeAbstained(scores: ScoreEntry[], threshold: number): boolean[] {
	return scores.map((s) => s.margin < threshold);
}

export interface CoveragePreview {
	total: number;
	abstained: number;
	covered: number;
}

/** Count-based coverage preview for a hypothetical threshold. */
export function coveragePreview(scores: ScoreEntry[], threshold: number): CoveragePreview {
	const flags = recomputeAbstained(scores, threshold);
	const abstained = flags.filter(Boolean).length;
	return { total: scores.length, abstained, covered: scores.length - abstained };
}

export type ChipState = "correct" | "incorrect" | "abstained";

/** Chip coloring: abstention wins, then truth comparison. */
export function chipStates(scores: ScoreEntry[], threshold: number): ChipState[] {
	const flags = recomputeAbstained(scores, threshold);
	return scores.map((s, i) => {
		if (flags[i]) return "abstained";
		return s.predicted === s.true_label ? "correct" : "incorrect";
	});
}

export interface HistogramBin {
	lo: number;
	hi: number;
	count: number;
}

/** Equal-width histogram of margins over [0, max]; last bin closed. */
export function marginHistogram(margins: number[], nBins = 10): HistogramBin[] {
	const top = margins.length ? Math.max(...margins) : 0;
	const hi = top > 0 ? top : 1;
	const bins: HistogramBin[] = [];
	for (let b = 0; b < nBins; b++) {
		bins.push({ lo: (hi * b) / nBins, hi: (hi * (b + 1)) / nBins, count: 0 });
	}
	for (const m of margins) {
		const idx = Math.min(Math.floor((m / hi) * nBins), nBins - 1);
		(bins[idx] as HistogramBin).count += 1;
	}
	return bins;
}
