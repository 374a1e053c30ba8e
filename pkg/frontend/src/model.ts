import { ApiError } from "./api";
import type {
  OutcomeResponse,
  PatientView,
  Recommendation,
  TrialView,
} from "./types";

export interface Banner {
  kind: "halt" | "conflict" | "error" | "advisory";
  message: string;
}

/** Client-side projection of one trial.
 *
 * Every number shown in the conduct screen is taken from the latest server
 * response stored here; nothing is recomputed locally. Responses older than
 * the current version are ignored, and submissions always carry the current
 * version so a concurrent edit surfaces as a conflict banner instead of a
 * silent overwrite.
 */
export class TrialViewModel {
  trial: TrialView | null = null;
  recommendation: Recommendation | null = null;
  banner: Banner | null = null;
  busy = false;

  get version(): number {
    return this.trial?.version ?? 0;
  }

  get halted(): boolean {
    return this.trial?.halted ?? false;
  }

  get covariateDim(): number {
    return this.trial?.covariate_dim ?? 0;
  }

  get patients(): PatientView[] {
    return this.trial?.patients ?? [];
  }

  get pendingPatients(): PatientView[] {
    return this.patients.filter((p) => p.status === "pending");
  }

  /** Dose text for the next-dose card, straight from the server payload. */
  get nextDoseText(): string {
    if (this.recommendation === null) return "—";
    const rec = this.recommendation;
    if (rec.snapped !== null) {
      return `${String(rec.snapped)} (continuous ${String(rec.continuous)})`;
    }
    return String(rec.continuous);
  }

  applyTrial(view: TrialView): boolean {
    if (this.trial && view.id === this.trial.id && view.version < this.trial.version) {
      return false; // stale response; keep the newer state
    }
    this.trial = view;
    if (view.halted) {
      this.recommendation = null;
      this.banner = { kind: "halt", message: `Trial halted: ${view.halt_reason}` };
    }
    return true;
  }

  applyRecommendation(rec: Recommendation): void {
    if (rec.version !== undefined && this.trial && rec.version < this.trial.version) {
      return;
    }
    this.recommendation = rec;
    if (rec.advisory) {
      this.banner = {
        kind: "advisory",
        message: "No configured dose level satisfies the tolerances; lowest level shown.",
      };
    }
  }

  /** Outcome responses refresh the version, halt state and (for trials
   * without covariates) the recommendation in one step. */
  applyOutcome(resp: OutcomeResponse): void {
    if (this.trial) {
      this.trial = {
        ...this.trial,
        version: resp.version,
        halted: resp.halted,
        halt_reason: resp.halt_reason,
        alpha: resp.alpha,
        resolved_count: resp.resolved_count,
        patients: this.trial.patients.map((p) =>
          p.patient_id === resp.patient.patient_id ? resp.patient : p,
        ),
      };
    }
    if (resp.halted) {
      this.recommendation = null;
      this.banner = { kind: "halt", message: `Trial halted: ${resp.halt_reason}` };
      return;
    }
    this.banner = null;
    if (resp.recommendation) {
      this.recommendation = resp.recommendation;
    }
  }

  applyError(err: unknown): void {
    if (err instanceof ApiError) {
      if (err.code === "conflict") {
        this.banner = {
          kind: "conflict",
          message: "Trial updated elsewhere; reload before entering outcomes.",
        };
        return;
      }
      if (err.code === "trial_halted") {
        this.banner = { kind: "halt", message: err.message };
        return;
      }
      this.banner = { kind: "error", message: err.message };
      return;
    }
    this.banner = { kind: "error", message: String(err) };
  }
}
