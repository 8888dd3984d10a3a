/* tslint:disable */
/* eslint-disable */

/**
 * JSON with coverage right after spraying and a minute later, the
 * disinfection verdict and tank use for one spray of `duration` seconds.
 */
export function coverage(duration: number): string;

/**
 * Deposition fraction at `samples` evenly spaced distances in
 * `[0, max_distance]`.
 */
export function deposition_curve(max_distance: number, samples: number): Float64Array;

/**
 * Runs one mission and returns the scene outline, the flown path (every
 * fifth tick), spray positions and the outcome as JSON. `hallway` 0 is the
 * bundled scene; any other value picks a random hallway.
 */
export function simulate(seed: number, hallway: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly coverage: (a: number) => [number, number];
    readonly deposition_curve: (a: number, b: number) => [number, number];
    readonly simulate: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
