/* tslint:disable */
/* eslint-disable */

/**
 * A small co-training run advanced one batch at a time.
 */
export class DuoDemo {
    free(): void;
    [Symbol.dispose](): void;
    constructor(seed: number, label_fraction: number, noise_level: number);
    panel(index: number): Float32Array;
    /**
     * Runs `count` alternating updates; returns the latest
     * `[total, supervised, agreement, adversarial, critic]` losses.
     */
    step(count: number): Float64Array;
    test_dsc(): number;
    readonly labeled_len: number;
    readonly resolution: number;
    readonly seg_steps: number;
    readonly test_len: number;
}

/**
 * A synthetic image with its mask, both row-major in `[0, 1]`.
 */
export class SynthSample {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    image(): Float32Array;
    mask(): Float32Array;
    readonly resolution: number;
    readonly shapes: number;
}

export function loss_curves(y: number, q: number, points: number): Float64Array;

export function synthesize(seed: number, resolution: number, noise_level: number): SynthSample;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_duodemo_free: (a: number, b: number) => void;
    readonly __wbg_synthsample_free: (a: number, b: number) => void;
    readonly duodemo_labeled_len: (a: number) => number;
    readonly duodemo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly duodemo_panel: (a: number, b: number) => [number, number, number, number];
    readonly duodemo_resolution: (a: number) => number;
    readonly duodemo_seg_steps: (a: number) => number;
    readonly duodemo_step: (a: number, b: number) => [number, number, number, number];
    readonly duodemo_test_dsc: (a: number) => [number, number, number];
    readonly duodemo_test_len: (a: number) => number;
    readonly loss_curves: (a: number, b: number, c: number) => [number, number, number, number];
    readonly synthesize: (a: number, b: number, c: number) => [number, number, number];
    readonly synthsample_image: (a: number) => [number, number];
    readonly synthsample_mask: (a: number) => [number, number];
    readonly synthsample_resolution: (a: number) => number;
    readonly synthsample_shapes: (a: number) => number;
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
