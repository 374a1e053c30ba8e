// Payload shapes of the trial service API. The UI renders these verbatim;
// it never derives statistical quantities of its own.

export interface ConstantsDoc {
  theta: number;
  x_min: number;
  x_max: number;
  epsilon: number;
  link?: string;
}

export interface AlphaDoc {
  start: number;
  increment: number;
  cap: number;
  hold_count: number;
}

export interface CovariatesDoc {
  name: string;
  c_lo: number;
  c_hi: number;
  group_name?: string;
  group_levels?: number[];
}

export interface ConfigDoc {
  label?: string;
  constants: ConstantsDoc;
  prior: { kind: string; [key: string]: unknown };
  alpha: AlphaDoc;
  covariates?: CovariatesDoc;
  dose_levels?: number[];
  tolerances?: { dose: number; cdf: number };
  halt_on_first_dlt?: boolean;
  resolution?: number[];
}

export interface PatientView {
  patient_id: string;
  dose: number;
  covariates: number[];
  status: "pending" | "resolved";
  dlt: number | null;
  recommended: number | null;
  advisory: boolean;
}

export interface TrialView {
  id: string;
  label: string;
  created_at: string;
  updated_at: string;
  version: number;
  halted: boolean;
  halt_reason: string | null;
  alpha: number;
  resolved_count: number;
  covariate_dim: number;
  config: ConfigDoc;
  patients: PatientView[];
  first_dose?: number;
  patient?: PatientView;
}

export interface TrialListItem {
  id: string;
  label: string;
  version: number;
  halted: boolean;
  patients: number;
  resolved_count: number;
  created_at: string;
  updated_at: string;
}

export interface PosteriorSummary {
  mean: number;
  sd: number;
  mode: number;
  median: number;
  hpd95: [number, number];
}

export interface Recommendation {
  alpha: number;
  continuous: number;
  snapped: number | null;
  advisory: boolean;
  hpd95: [number, number];
  posterior: PosteriorSummary;
  id?: string;
  version?: number;
  covariates?: number[];
}

export interface OutcomeResponse {
  id: string;
  version: number;
  halted: boolean;
  halt_reason: string | null;
  alpha: number;
  resolved_count: number;
  patient: PatientView;
  recommendation: Recommendation | null;
  posterior_at_reference?: PosteriorSummary;
}

export interface MtdCurve {
  w: number[];
  median: number[];
  lo: number[];
  hi: number[];
}

export interface PosteriorPayload {
  id: string;
  version: number;
  n_obs: number;
  covariates: number[];
  density: { dose: number[]; density: number[] };
  summaries: PosteriorSummary;
  mtd_curve?: MtdCurve;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail?: unknown;
}
