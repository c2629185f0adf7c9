/* tslint:disable */
/* eslint-disable */

export class Denoised {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    confidence(): number;
    gain(): number;
    /**
     * Fitted components as a JSON array of `[alpha, mu, sigma, eta, freq, phase]`.
     */
    params(): string;
    psnrFit(): number;
    reconstruction(): Float64Array;
}

/**
 * A generated frame pair.
 */
export class Synthetic {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Fits the noisy frame and reconstructs it.
     */
    denoise(plan: string): Denoised;
    /**
     * Sampling period in ms.
     */
    dt(): number;
    gt(): Float64Array;
    /**
     * The first `k` default echoes over `duration_ms` at 300 kHz, with
     * Gaussian noise of standard deviation `noise`, quantized to 8 bits.
     */
    constructor(k: number, noise: number, duration_ms: number, seed: bigint);
    noisy(): Float64Array;
    psnrRaw(): number;
}

/**
 * One echo centred in a 1 ms window sampled at 1 MHz. Returns the envelope
 * and the oscillating pulse back to back.
 */
export function echoShape(sigma: number, eta: number, freq: number, phase: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_denoised_free: (a: number, b: number) => void;
    readonly __wbg_synthetic_free: (a: number, b: number) => void;
    readonly denoised_confidence: (a: number) => number;
    readonly denoised_gain: (a: number) => number;
    readonly denoised_params: (a: number) => [number, number];
    readonly denoised_psnrFit: (a: number) => number;
    readonly denoised_reconstruction: (a: number) => [number, number];
    readonly echoShape: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly synthetic_denoise: (a: number, b: number, c: number) => [number, number, number];
    readonly synthetic_dt: (a: number) => number;
    readonly synthetic_gt: (a: number) => [number, number];
    readonly synthetic_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly synthetic_noisy: (a: number) => [number, number];
    readonly synthetic_psnrRaw: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
