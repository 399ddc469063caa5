/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_duodemo_free: (a: number, b: number) => void;
export const __wbg_synthsample_free: (a: number, b: number) => void;
export const duodemo_labeled_len: (a: number) => number;
export const duodemo_new: (a: number, b: number, c: number) => [number, number, number];
export const duodemo_panel: (a: number, b: number) => [number, number, number, number];
export const duodemo_resolution: (a: number) => number;
export const duodemo_seg_steps: (a: number) => number;
export const duodemo_step: (a: number, b: number) => [number, number, number, number];
export const duodemo_test_dsc: (a: number) => [number, number, number];
export const duodemo_test_len: (a: number) => number;
export const loss_curves: (a: number, b: number, c: number) => [number, number, number, number];
export const synthesize: (a: number, b: number, c: number) => [number, number, number];
export const synthsample_image: (a: number) => [number, number];
export const synthsample_mask: (a: number) => [number, number];
export const synthsample_resolution: (a: number) => number;
export const synthsample_shapes: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
