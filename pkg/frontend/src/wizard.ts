import type { ConfigDoc } from "./types";

// Form state for the trial wizard; strings as typed by the user.
export interface WizardInput {
  label: string;
  theta: string;
  xMin: string;
  xMax: string;
  epsilon: string;
  priorKind: string;
  covName: string;
  cLo: string;
  cHi: string;
  alphaStart: string;
  alphaIncrement: string;
  alphaCap: string;
  alphaHold: string;
  doseLevels: string; // comma separated, optional
  tolDose: string;
  tolCdf: string;
  haltOnFirstDlt: boolean;
}

export const emptyWizard: WizardInput = {
  label: "",
  theta: "0.3333333333333333",
  xMin: "",
  xMax: "",
  epsilon: "0.05",
  priorKind: "uniform_2p",
  covName: "",
  cLo: "",
  cHi: "",
  alphaStart: "0.25",
  alphaIncrement: "0",
  alphaCap: "0.5",
  alphaHold: "0",
  doseLevels: "",
  tolDose: "0",
  tolCdf: "0.05",
  haltOnFirstDlt: true,
};

const num = (s: string): number | null => {
  if (s.trim() === "") return null;
  const v = Number(s);
  return Number.isFinite(v) ? v : null;
};

/** Client-side mirror of the server's validation rules. Field errors keep
 * the server's dotted paths so ApiError.detail merges straight in. */
export function validateWizard(input: WizardInput): Record<string, string> {
  const errors: Record<string, string> = {};
  const theta = num(input.theta);
  const epsilon = num(input.epsilon);
  const xMin = num(input.xMin);
  const xMax = num(input.xMax);
  if (theta === null || theta <= 0 || theta >= 1) {
    errors["constants.theta"] = "target DLT probability must be in (0, 1)";
  }
  if (epsilon === null || epsilon <= 0 || epsilon >= 1) {
    errors["constants.epsilon"] = "epsilon must be in (0, 1)";
  } else if (theta !== null && theta >= 1 - epsilon) {
    errors["constants.theta"] = `must be below 1 - epsilon = ${1 - epsilon}`;
  }
  if (xMin === null) errors["constants.x_min"] = "required";
  if (xMax === null) errors["constants.x_max"] = "required";
  if (xMin !== null && xMax !== null && xMin >= xMax) {
    errors["constants.x_max"] = "x_max must exceed x_min";
  }
  const start = num(input.alphaStart);
  const cap = num(input.alphaCap);
  const increment = num(input.alphaIncrement);
  const hold = num(input.alphaHold);
  if (start === null || cap === null || start <= 0 || cap < start) {
    errors["alpha.start"] = "need 0 < start <= cap";
  }
  if (cap !== null && cap >= 1) errors["alpha.cap"] = "cap must be below 1";
  if (increment === null || increment < 0) {
    errors["alpha.increment"] = "increment must be nonnegative";
  }
  if (hold === null || hold < 0 || !Number.isInteger(hold)) {
    errors["alpha.hold_count"] = "hold count must be a nonnegative integer";
  }
  if (input.priorKind === "uniform_cov3") {
    const cLo = num(input.cLo);
    const cHi = num(input.cHi);
    if (cLo === null || cHi === null || cLo >= cHi) {
      errors["covariates"] = "covariate bounds must satisfy c_lo < c_hi";
    }
  }
  if (input.doseLevels.trim() !== "") {
    const levels = input.doseLevels.split(",").map((s) => num(s));
    if (levels.some((v) => v === null)) {
      errors["dose_levels"] = "expected a comma-separated list of doses";
    } else {
      const vals = levels as number[];
      if (vals.some((v, i) => i > 0 && v <= vals[i - 1])) {
        errors["dose_levels"] = "levels must be strictly increasing";
      } else if (xMin !== null && xMax !== null
                 && (vals[0] < xMin || vals[vals.length - 1] > xMax)) {
        errors["dose_levels"] = "levels must lie within [x_min, x_max]";
      }
      const tolDose = num(input.tolDose);
      const tolCdf = num(input.tolCdf);
      if (tolDose === null || tolDose < 0) errors["tolerances.dose"] = "nonnegative number required";
      if (tolCdf === null || tolCdf < 0) errors["tolerances.cdf"] = "nonnegative number required";
    }
  }
  return errors;
}

export function buildConfigDoc(input: WizardInput): ConfigDoc {
  const doc: ConfigDoc = {
    label: input.label,
    constants: {
      theta: Number(input.theta),
      x_min: Number(input.xMin),
      x_max: Number(input.xMax),
      epsilon: Number(input.epsilon),
    },
    prior: { kind: input.priorKind },
    alpha: {
      start: Number(input.alphaStart),
      increment: Number(input.alphaIncrement),
      cap: Number(input.alphaCap),
      hold_count: Number(input.alphaHold),
    },
    halt_on_first_dlt: input.haltOnFirstDlt,
  };
  if (input.priorKind === "uniform_cov3") {
    doc.covariates = {
      name: input.covName || "covariate",
      c_lo: Number(input.cLo),
      c_hi: Number(input.cHi),
    };
  }
  if (input.doseLevels.trim() !== "") {
    doc.dose_levels = input.doseLevels.split(",").map(Number);
    doc.tolerances = { dose: Number(input.tolDose), cdf: Number(input.tolCdf) };
  }
  return doc;
}

/** Preview of the feasibility bound by resolved-patient count; mirrors the
 * server's schedule so the clinician can sanity-check it before creating
 * the trial. */
export function alphaPreview(
  start: number,
  increment: number,
  cap: number,
  holdCount: number,
  maxResolved = 20,
): { resolved: number; alpha: number }[] {
  const rows = [];
  for (let n = 0; n <= maxResolved; n += 1) {
    const alpha = n <= holdCount || increment === 0
      ? start
      : Math.min(cap, start + increment * (n - holdCount));
    rows.push({ resolved: n, alpha });
  }
  return rows;
}
