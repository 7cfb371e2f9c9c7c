/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_curve: (a: number, b: number) => [number, number, number, number];
export const demo_history: (a: number) => [number, number];
export const demo_iteration: (a: number) => number;
export const demo_loss: (a: number) => number;
export const demo_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const demo_omega: (a: number) => [number, number];
export const demo_phi: (a: number) => [number, number];
export const demo_status: (a: number) => [number, number];
export const demo_step: (a: number, b: number) => [number, number, number];
export const demo_theta_deg: (a: number) => number;
export const demo_times: (a: number) => [number, number];
export const demo_wigner: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
