import { ApiClient, ApiError } from "./api";
import { densitySvg, mtdCurveSvg } from "./charts";
import { TrialViewModel } from "./model";
import type { TrialView } from "./types";
import { alphaPreview, buildConfigDoc, emptyWizard, validateWizard, WizardInput } from "./wizard";

const $ = <T extends HTMLElement>(sel: string): T => {
  const el = document.querySelector<T>(sel);
  if (!el) throw new Error(`missing element ${sel}`);
  return el;
};

const baseUrl = localStorage.getItem("ewoc.baseUrl") ?? "";
const token = localStorage.getItem("ewoc.token");
const client = new ApiClient(baseUrl, (...args) => fetch(...args), token);
const vm = new TrialViewModel();

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

function render(): void {
  const banner = $("#banner");
  if (vm.banner) {
    banner.className = `banner ${vm.banner.kind}`;
    banner.textContent = vm.banner.message;
    banner.style.display = "block";
  } else {
    banner.style.display = "none";
  }

  const conduct = $("#conduct");
  if (!vm.trial) {
    conduct.style.display = "none";
    return;
  }
  conduct.style.display = "block";
  const t = vm.trial;
  $("#trial-title").textContent = `${t.label || t.id} (version ${t.version})`;
  $("#trial-alpha").textContent = `feasibility bound α = ${t.alpha}`;
  $("#next-dose").textContent = vm.halted ? "trial halted" : vm.nextDoseText;

  const rows = vm.patients.map((p) => {
    const covs = p.covariates.length > 0 ? p.covariates.join(", ") : "—";
    const outcome = p.status === "pending"
      ? `<button class="dlt0" data-pid="${p.patient_id}">no DLT</button>
         <button class="dlt1" data-pid="${p.patient_id}">DLT</button>`
      : (p.dlt === 1 ? "DLT" : "no DLT");
    return `<tr>
      <td>${p.patient_id}</td><td>${p.dose}</td><td>${covs}</td>
      <td>${p.status}</td><td>${outcome}</td></tr>`;
  });
  $("#patients tbody").innerHTML = rows.join("");
  document.querySelectorAll<HTMLButtonElement>("#patients button").forEach((btn) => {
    btn.onclick = () => submitOutcome(btn.dataset.pid!, btn.classList.contains("dlt1") ? 1 : 0);
    btn.disabled = vm.busy;
  });

  const enrollBtn = $("#enroll") as HTMLButtonElement;
  enrollBtn.disabled = vm.busy || vm.halted || vm.pendingPatients.length > 0
    || t.resolved_count === 0;
  ($("#enroll-covariates") as HTMLElement).style.display =
    vm.covariateDim > 0 ? "inline" : "none";
  ($("#whatif") as HTMLElement).style.display = vm.covariateDim > 0 ? "block" : "none";
}

async function refreshPosterior(): Promise<void> {
  if (!vm.trial || vm.halted) return;
  try {
    const covs = vm.covariateDim > 0 ? referenceCovariates(vm.trial) : undefined;
    const payload = await client.posterior(vm.trial.id, { covariates: covs, samples: 201 });
    $("#density-panel").innerHTML = densitySvg(payload, doseUnit());
    if (payload.mtd_curve && vm.trial) {
      const bounds: [number, number] = [
        vm.trial.config.constants.x_min, vm.trial.config.constants.x_max];
      $("#curve-panel").innerHTML = mtdCurveSvg(
        payload.mtd_curve, vm.trial.patients, bounds,
        vm.trial.config.covariates?.name ?? "covariate");
    } else {
      $("#curve-panel").innerHTML = "";
    }
  } catch (err) {
    vm.applyError(err);
    render();
  }
}

function doseUnit(): string {
  return vm.trial?.label?.toLowerCase().includes("abr") ? "dose" : "dose";
}

function referenceCovariates(t: TrialView): number[] {
  const cov = t.config.covariates!;
  const ref = [cov.c_hi];
  if (cov.group_levels) ref.push(cov.group_levels[0]);
  return ref;
}

// ---------------------------------------------------------------------------
// actions
// ---------------------------------------------------------------------------

async function submitOutcome(patientId: string, dlt: 0 | 1): Promise<void> {
  if (!vm.trial || vm.busy) return;
  vm.busy = true;
  render();
  try {
    const resp = await client.postOutcome(vm.trial.id, patientId, dlt, vm.version);
    vm.applyOutcome(resp);
    const view = await client.getTrial(vm.trial.id);
    vm.applyTrial(view);
  } catch (err) {
    vm.applyError(err);
  } finally {
    vm.busy = false;
  }
  render();
  await refreshPosterior();
}

async function enrollNext(): Promise<void> {
  if (!vm.trial || vm.busy) return;
  let covariates: number[] | undefined;
  if (vm.covariateDim > 0) {
    const raw = ($("#enroll-cov-input") as HTMLInputElement).value;
    covariates = raw.split(",").map(Number);
  }
  vm.busy = true;
  render();
  try {
    const view = await client.enroll(vm.trial.id, vm.version, covariates);
    vm.applyTrial(view);
    if (view.patient?.recommended != null) {
      vm.banner = null;
    }
  } catch (err) {
    vm.applyError(err);
  } finally {
    vm.busy = false;
  }
  render();
  await refreshPosterior();
}

async function whatIf(): Promise<void> {
  if (!vm.trial) return;
  const raw = ($("#whatif-input") as HTMLInputElement).value;
  const out = $("#whatif-result");
  try {
    const rec = await client.recommendation(vm.trial.id, raw.split(",").map(Number));
    out.textContent = `recommended dose ${rec.continuous}`
      + (rec.snapped !== null ? ` (level ${rec.snapped})` : "");
  } catch (err) {
    out.textContent = err instanceof ApiError ? err.message : String(err);
  }
}

async function loadTrial(id: string): Promise<void> {
  try {
    const view = await client.getTrial(id);
    vm.banner = null;
    vm.applyTrial(view);
    if (!view.halted && view.covariate_dim === 0) {
      vm.applyRecommendation(await client.recommendation(view.id));
    }
  } catch (err) {
    vm.applyError(err);
  }
  render();
  await refreshPosterior();
}

// ---------------------------------------------------------------------------
// wizard
// ---------------------------------------------------------------------------

function readWizard(): WizardInput {
  return {
    ...emptyWizard,
    label: ($("#w-label") as HTMLInputElement).value,
    theta: ($("#w-theta") as HTMLInputElement).value,
    xMin: ($("#w-xmin") as HTMLInputElement).value,
    xMax: ($("#w-xmax") as HTMLInputElement).value,
    epsilon: ($("#w-epsilon") as HTMLInputElement).value,
    priorKind: ($("#w-prior") as HTMLSelectElement).value,
    covName: ($("#w-covname") as HTMLInputElement).value,
    cLo: ($("#w-clo") as HTMLInputElement).value,
    cHi: ($("#w-chi") as HTMLInputElement).value,
    alphaStart: ($("#w-astart") as HTMLInputElement).value,
    alphaIncrement: ($("#w-ainc") as HTMLInputElement).value,
    alphaCap: ($("#w-acap") as HTMLInputElement).value,
    alphaHold: ($("#w-ahold") as HTMLInputElement).value,
    doseLevels: ($("#w-levels") as HTMLInputElement).value,
    tolDose: ($("#w-t1") as HTMLInputElement).value,
    tolCdf: ($("#w-t2") as HTMLInputElement).value,
    haltOnFirstDlt: ($("#w-halt") as HTMLInputElement).checked,
  };
}

function renderWizardErrors(errors: Record<string, string>): void {
  $("#wizard-errors").innerHTML = Object.entries(errors)
    .map(([field, msg]) => `<li><code>${field}</code>: ${msg}</li>`)
    .join("");
}

function renderAlphaPreview(): void {
  const input = readWizard();
  const rows = alphaPreview(
    Number(input.alphaStart), Number(input.alphaIncrement),
    Number(input.alphaCap), Number(input.alphaHold));
  $("#alpha-preview tbody").innerHTML = rows
    .filter((_, i) => i % 2 === 0)
    .map((r) => `<tr><td>${r.resolved}</td><td>${r.alpha.toFixed(3)}</td></tr>`)
    .join("");
}

async function createTrial(event: Event): Promise<void> {
  event.preventDefault();
  const input = readWizard();
  const errors = validateWizard(input);
  if (Object.keys(errors).length > 0) {
    renderWizardErrors(errors);
    return;
  }
  renderWizardErrors({});
  const config = buildConfigDoc(input);
  let covariates: number[] | undefined;
  if (input.priorKind === "uniform_cov3") {
    covariates = ($("#w-p1cov") as HTMLInputElement).value.split(",").map(Number);
  }
  try {
    const view = await client.createTrial(config, covariates);
    vm.applyTrial(view);
    if (!view.halted && view.covariate_dim === 0) {
      vm.applyRecommendation(await client.recommendation(view.id));
    }
    window.location.hash = view.id;
  } catch (err) {
    if (err instanceof ApiError && err.code === "invalid_config" && err.detail) {
      renderWizardErrors(err.detail as Record<string, string>);
      return;
    }
    vm.applyError(err);
  }
  render();
  await refreshPosterior();
}

// ---------------------------------------------------------------------------
// boot
// ---------------------------------------------------------------------------

export function boot(): void {
  $("#wizard-form").addEventListener("submit", createTrial);
  $("#wizard-form").addEventListener("input", renderAlphaPreview);
  $("#enroll").addEventListener("click", enrollNext);
  $("#whatif-go").addEventListener("click", whatIf);
  $("#reload").addEventListener("click", () => {
    if (vm.trial) void loadTrial(vm.trial.id);
  });
  renderAlphaPreview();
  const fromHash = window.location.hash.replace("#", "");
  if (fromHash) void loadTrial(fromHash);
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
