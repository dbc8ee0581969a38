/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_modecurveview_free: (a: number, b: number) => void;
export const __wbg_tradeoffview_free: (a: number, b: number) => void;
export const __wbg_trajectoryview_free: (a: number, b: number) => void;
export const hpTradeoff: (a: number, b: number, c: number, d: number) => [number, number, number];
export const modeCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const modecurveview_gridModes: (a: number) => [number, number];
export const modecurveview_heatmap: (a: number) => [number, number];
export const modecurveview_lambdas: (a: number) => [number, number];
export const modecurveview_odeModes: (a: number) => [number, number];
export const modecurveview_stopped: (a: number) => [number, number];
export const modecurveview_xs: (a: number) => [number, number];
export const trackLikelihood: (a: number, b: number, c: number, d: number) => [number, number, number];
export const tradeoffview_logDensity: (a: number) => [number, number];
export const tradeoffview_points: (a: number) => [number, number];
export const tradeoffview_thresholdT: (a: number) => number;
export const trajectoryview_analytic: (a: number) => [number, number];
export const trajectoryview_t: (a: number) => [number, number];
export const trajectoryview_tracked: (a: number) => [number, number];
export const trajectoryview_x: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
