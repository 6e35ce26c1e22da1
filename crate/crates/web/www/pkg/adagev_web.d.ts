/* tslint:disable */
/* eslint-disable */

/**
 * PDF, CDF and rejection threshold of a GEV over its central 99.8%.
 */
export function gev_curves(l: number, s: number, c: number, points: number): string;

/**
 * Trains on a small shifted-blobs benchmark and returns the target
 * predictions, metrics, GEV and epoch log.
 */
export function train_toy(seed: bigint, epochs: number, lambda_d: number, lambda_e: number, rotation_deg: number): string;

/**
 * Normalized target weights for a batch whose entropies are spread evenly
 * over `[0, ln K]`.
 */
export function weight_curves(classes: number, batch: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly gev_curves: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly train_toy: (a: bigint, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly weight_curves: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
