/* tslint:disable */
/* eslint-disable */

export class ModeCurveView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly gridModes: Float64Array;
    /**
     * Row-major, `xs.length` rows by `lambdas.length` columns.
     */
    readonly heatmap: Float64Array;
    readonly lambdas: Float64Array;
    readonly odeModes: Float64Array;
    readonly stopped: string;
    readonly xs: Float64Array;
}

export class TradeoffView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly logDensity: Float64Array;
    /**
     * Interleaved `(x, y)` pairs.
     */
    readonly points: Float64Array;
    readonly thresholdT: number;
}

export class TrajectoryView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly analytic: Float64Array;
    readonly t: Float64Array;
    readonly tracked: Float64Array;
    readonly x: Float64Array;
}

/**
 * High-probability samples on the four-corner mixture.
 */
export function hpTradeoff(threshold_lambda: number, n: number, n_steps: number, seed: number): TradeoffView;

/**
 * Mode curve on the three-component mixture.
 */
export function modeCurve(x_t: number, lambda_t: number, lambda_to: number, points: number, rows: number): ModeCurveView;

/**
 * One tracked reverse-SDE path; `scheme` is `"trapezoidal"`, `"milstein"`
 * or `"euler-maruyama"`.
 */
export function trackLikelihood(seed: number, n_steps: number, scheme: string): TrajectoryView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_modecurveview_free: (a: number, b: number) => void;
    readonly __wbg_tradeoffview_free: (a: number, b: number) => void;
    readonly __wbg_trajectoryview_free: (a: number, b: number) => void;
    readonly hpTradeoff: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly modeCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly modecurveview_gridModes: (a: number) => [number, number];
    readonly modecurveview_heatmap: (a: number) => [number, number];
    readonly modecurveview_lambdas: (a: number) => [number, number];
    readonly modecurveview_odeModes: (a: number) => [number, number];
    readonly modecurveview_stopped: (a: number) => [number, number];
    readonly modecurveview_xs: (a: number) => [number, number];
    readonly trackLikelihood: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly tradeoffview_logDensity: (a: number) => [number, number];
    readonly tradeoffview_points: (a: number) => [number, number];
    readonly tradeoffview_thresholdT: (a: number) => number;
    readonly trajectoryview_analytic: (a: number) => [number, number];
    readonly trajectoryview_t: (a: number) => [number, number];
    readonly trajectoryview_tracked: (a: number) => [number, number];
    readonly trajectoryview_x: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
