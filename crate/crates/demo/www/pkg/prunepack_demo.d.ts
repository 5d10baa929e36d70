/* tslint:disable */
/* eslint-disable */

/**
 * Fraction of prunable weights owned by each of `pairs` adapted pairs,
 * followed by the fraction still free at the end.
 */
export function capacity_curve(base_ratio: number, pair_ratio: number, pairs: number, equal_share: boolean, prune_last: boolean): Float64Array;

/**
 * Owner ids of a `rows x cols` matrix, frame after frame: dense, after
 * base pruning, then after each pair. Frames are concatenated row-major.
 */
export function mask_evolution(rows: number, cols: number, base_ratio: number, pair_ratio: number, pairs: number, seed: number): Uint8Array;

/**
 * Sampling probability of each pair given its training-set size.
 */
export function temperature_weights(sizes: Uint32Array, temperature: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly capacity_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly mask_evolution: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly temperature_weights: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
