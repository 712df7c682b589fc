/** Wire types mirroring the service's JSON bodies. */

export type ClassName = "sitting" | "standing" | "walking_running";

export const CLASS_ORDER: ClassName[] = ["sitting", "standing", "walking_running"];

export type TaskName = "multi" | "binary";

export interface ManifestRecord {
	image_id: string;
	file_path: string;
	label: ClassName;
	split?: string;
	person_box?: [number, number, number, number];
	keypoints?: number[];
	width_px: number;
	height_px: number;
}

export interface ManifestResponse {
	resize_target: [number, number];
	class_counts: Record<ClassName, number>;
	records: ManifestRecord[];
}

export interface PromptSetDoc {
	set_id: string;
	tier: number;
	description: string;
	prompts: Record<ClassName, string[]>;
	revision: number;
	lint_findings?: LintFinding[];
}

export interface LintFinding {
	term: string;
	category: string;
	class: ClassName;
	prompt: string;
	severity: string;
}

export interface ScoreEntry {
	image_id: string;
	similarities: Record<string, number>;
	temperature: number;
	probabilities: Record<string, number>;
	predicted: ClassName;
	margin: number;
	abstained: boolean;
	prompt_set_id: string;
	true_label?: ClassName;
}

export interface ConfusionDoc {
	labels: ClassName[];
	counts: number[][];
}

export interface MetricsDoc {
	task: TaskName;
	accuracy: number;
	macro_precision: number;
	macro_recall: number;
	macro_f1: number;
	per_class_f1: Record<string, number>;
	confusion: ConfusionDoc;
	coverage: number;
	n_evaluated: number;
	n_abstained: number;
	degenerate_classes: string[];
}

export interface EvaluateResponse {
	ws_id: string;
	prompt_set_id: string;
	prompt_set_revision: number;
	scores: ScoreEntry[];
	failures: { image_id: string; error: string }[];
	metrics: MetricsDoc;
}

export interface SaliencyEntry {
	class: ClassName;
	prompt: string;
	overlay: string;
	in_person_proportion: number;
	normalized_entropy: number;
	person_box: [number, number, number, number];
	map_size: [number, number];
}

export interface SaliencyResponse {
	image_id: string;
	prompt_set_id: string;
	prompt_set_revision: number;
	full_image_box: boolean;
	stats: SaliencyEntry[];
}

export interface ErrorBody {
	code: string;
	message: string;
	detail: unknown;
}
