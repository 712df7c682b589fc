/** Prompt draft state: per-class editable lists tracked against a base
 * revision, persisted locally so an accidental reload loses nothing. */

import { CLASS_ORDER } from "./types.js";
import type { ClassName, PromptSetDoc } from "./types.js";

export interface PromptDraft {
	setId: string;
	baseRevision: number;
	tier: number;
	description: string;
	prompts: Record<ClassName, string[]>;
	basePrompts: Record<ClassName, string[]>;
}

export interface KV {
	getItem(key: string): string | null;
	setItem(key: string, value: string): void;
	removeItem(key: string): void;
}

class MemoryKV implements KV {
	private map = new Map<string, string>();
	getItem(key: string): string | null {
		return this.map.has(key) ? (this.map.get(key) as string) : null;
	}
	setItem(key: string, value: string): void {
		this.map.set(key, value);
	}
	removeItem(key: string): void {
		this.map.delete(key);
	}
}

export function defaultStorage(): KV {
	const g = globalThis as { localStorage?: KV };
	return g.localStorage ?? new MemoryKV();
}

function clonePrompts(prompts: Record<ClassName, string[]>): Record<ClassName, string[]> {
	const out = {} as Record<ClassName, string[]>;
	for (const cls of CLASS_ORDER) out[cls] = [...(prompts[cls] ?? [])];
	return out;
}

export function draftFromPromptSet(doc: PromptSetDoc): PromptDraft {
	return {
		setId: doc.set_id,
		baseRevision: doc.revision,
		tier: doc.tier,
		description: doc.description,
		prompts: clonePrompts(doc.prompts),
		basePrompts: clonePrompts(doc.prompts),
	};
}

export function isDirty(draft: PromptDraft): boolean {
	return JSON.stringify(draft.prompts) !== JSON.stringify(draft.basePrompts);
}

export function withEdit(
	draft: PromptDraft,
	cls: ClassName,
	index: number,
	text: string,
): PromptDraft {
	const prompts = clonePrompts(draft.prompts);
	const list = prompts[cls];
	if (index < 0 || index > list.length) throw new Error(`prompt index ${index} out of range`);
	if (index === list.length) list.push(text);
	else list[index] = text;
	return { ...draft, prompts };
}

export function withRemoved(draft: PromptDraft, cls: ClassName, index: number): PromptDraft {
	const prompts = clonePrompts(draft.prompts);
	prompts[cls].splice(index, 1);
	return { ...draft, prompts };
}

/** Blank prompts block submission; empty classes too. */
export function validateDraft(draft: PromptDraft): string[] {
	const problems: string[] = [];
	for (const cls of CLASS_ORDER) {
		const list = draft.prompts[cls];
		if (list.length === 0) problems.push(`${cls}: no prompts`);
		list.forEach((p, i) => {
			if (p.trim() === "") problems.push(`${cls}[${i}]: blank prompt`);
		});
	}
	return problems;
}

const STORAGE_PREFIX = "posepilot-draft:";

export class DraftStore {
	constructor(private readonly storage: KV = defaultStorage()) {}

	save(draft: PromptDraft): void {
		this.storage.setItem(STORAGE_PREFIX + draft.setId, JSON.stringify(draft));
	}

	load(setId: string): PromptDraft | null {
		const raw = this.storage.getItem(STORAGE_PREFIX + setId);
		if (raw === null) return null;
		try {
			return JSON.parse(raw) as PromptDraft;
		} catch {
			return null;
		}
	}

	discard(setId: string): void {
		this.storage.removeItem(STORAGE_PREFIX + setId);
	}
}
