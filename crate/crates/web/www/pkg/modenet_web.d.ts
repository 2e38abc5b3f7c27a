/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    alpha(): Uint8Array;
    /**
     * Encode and decode the current pair. `mode`: 0 copy, 1 code every
     * pixel, 2 ModeNet. Returns a one-line summary.
     */
    code(mode: number): string;
    cur(): Uint8Array;
    /**
     * Draw a new pair of frames.
     */
    generate(seed: number, objects: number, speed: number): void;
    motion(): Uint8Array;
    /**
     * A 64×64 toy system with weights drawn from `model_seed`.
     */
    constructor(model_seed: number);
    prev(): Uint8Array;
    recon(): Uint8Array;
    side(): number;
}

/**
 * Bits spent on each integer symbol in `lo..=hi` under the tabulated
 * quantized Laplace(μ, b).
 */
export function laplace_bits(mu: number, b: number, lo: number, hi: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_alpha: (a: number) => [number, number];
    readonly demo_code: (a: number, b: number) => [number, number, number, number];
    readonly demo_cur: (a: number) => [number, number];
    readonly demo_generate: (a: number, b: number, c: number, d: number) => void;
    readonly demo_motion: (a: number) => [number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_prev: (a: number) => [number, number];
    readonly demo_recon: (a: number) => [number, number];
    readonly demo_side: (a: number) => number;
    readonly laplace_bits: (a: number, b: number, c: number, d: number) => [number, number];
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
