/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    curve(theta_deg: number): Float64Array;
    history(): Float64Array;
    iteration(): number;
    loss(): number;
    constructor(kappa: number, n_bar: number, theta_deg: number, t_final: number, n_bins: number, seed: number, target_db: number);
    omega(): Float64Array;
    phi(): Float64Array;
    status(): string;
    step(n: number): boolean;
    times(): Float64Array;
    wigner(fraction: number, points: number): Float64Array;
    readonly theta_deg: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_curve: (a: number, b: number) => [number, number, number, number];
    readonly demo_history: (a: number) => [number, number];
    readonly demo_iteration: (a: number) => number;
    readonly demo_loss: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly demo_omega: (a: number) => [number, number];
    readonly demo_phi: (a: number) => [number, number];
    readonly demo_status: (a: number) => [number, number];
    readonly demo_step: (a: number, b: number) => [number, number, number];
    readonly demo_theta_deg: (a: number) => number;
    readonly demo_times: (a: number) => [number, number];
    readonly demo_wigner: (a: number, b: number, c: number) => [number, number, number, number];
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
