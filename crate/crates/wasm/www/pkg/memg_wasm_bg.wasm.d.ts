/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_denoised_free: (a: number, b: number) => void;
export const __wbg_synthetic_free: (a: number, b: number) => void;
export const denoised_confidence: (a: number) => number;
export const denoised_gain: (a: number) => number;
export const denoised_params: (a: number) => [number, number];
export const denoised_psnrFit: (a: number) => number;
export const denoised_reconstruction: (a: number) => [number, number];
export const echoShape: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const synthetic_denoise: (a: number, b: number, c: number) => [number, number, number];
export const synthetic_dt: (a: number) => number;
export const synthetic_gt: (a: number) => [number, number];
export const synthetic_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const synthetic_noisy: (a: number) => [number, number];
export const synthetic_psnrRaw: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
