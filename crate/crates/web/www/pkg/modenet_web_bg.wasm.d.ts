/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_alpha: (a: number) => [number, number];
export const demo_code: (a: number, b: number) => [number, number, number, number];
export const demo_cur: (a: number) => [number, number];
export const demo_generate: (a: number, b: number, c: number, d: number) => void;
export const demo_motion: (a: number) => [number, number];
export const demo_new: (a: number) => [number, number, number];
export const demo_prev: (a: number) => [number, number];
export const demo_recon: (a: number) => [number, number];
export const demo_side: (a: number) => number;
export const laplace_bits: (a: number, b: number, c: number, d: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
