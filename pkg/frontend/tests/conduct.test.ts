// Contract tests against recorded API traffic: the view model must surface
// exactly the numbers the server sent, byte for byte, and the request
// sequence must match what driving the HTTP API directly produced.

import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api";
import { TrialViewModel } from "../src/model";
import type { ConfigDoc, OutcomeResponse } from "../src/types";
import { fixtureFetch, loadFixture } from "./helpers";

describe("scripted 10-patient conduct", () => {
  it("replays the recorded script with byte-identical recommendations", async () => {
    const entries = loadFixture("conduct10.json");
    const fx = fixtureFetch(entries);
    const client = new ApiClient("", fx.fetch);
    const vm = new TrialViewModel();

    const config = entries[0].request.body as ConfigDoc;
    const created = await client.createTrial(config);
    vm.applyTrial(created);
    const tid = created.id;
    expect(created.first_dose).toBe(60.0);

    for (let round = 0; round < 10; round += 1) {
      vm.applyTrial(await client.getTrial(tid));
      const pending = vm.pendingPatients[0];
      const outcomeEntry = entries[2 + round * 4];
      const dlt = (outcomeEntry.request.body as { dlt: 0 | 1 }).dlt;
      const resp = await client.postOutcome(tid, pending.patient_id, dlt, vm.version);
      vm.applyOutcome(resp);

      const raw = JSON.parse(outcomeEntry.response.text) as OutcomeResponse;
      const rec = raw.recommendation!;
      // exact double equality and exact serialized equality with the wire value
      expect(vm.recommendation!.continuous).toBe(rec.continuous);
      expect(JSON.stringify(vm.recommendation)).toBe(JSON.stringify(rec));
      // the displayed string reproduces the server's bytes for that number
      expect(vm.nextDoseText).toBe(String(rec.continuous));
      expect(outcomeEntry.response.text).toContain(
        `"continuous":${String(rec.continuous)}`,
      );
      expect(vm.recommendation!.alpha).toBe(rec.alpha);

      vm.applyTrial(await client.getTrial(tid));
      const enrolled = await client.enroll(tid, vm.version);
      vm.applyTrial(enrolled);
      // the dose assigned by the server equals the recommendation it reported
      expect(enrolled.patient!.recommended).toBe(rec.continuous);
    }

    const posterior = await client.posterior(tid, { samples: 101 });
    expect(posterior.density.dose.length).toBe(101);
    expect(posterior.n_obs).toBe(10);
    fx.done();
  });

  it("escalates after a run of non-DLT outcomes", async () => {
    const entries = loadFixture("conduct10.json");
    const outcomes = entries
      .filter((e) => e.request.path.endsWith("/outcome"))
      .map((e) => ({
        dlt: (e.request.body as { dlt: number }).dlt,
        rec: (JSON.parse(e.response.text) as OutcomeResponse).recommendation!.continuous,
      }));
    expect(outcomes.length).toBe(10);
    // recorded script starts 0,0,0: recommendations must be nondecreasing there
    expect(outcomes[0].dlt).toBe(0);
    expect(outcomes[1].rec).toBeGreaterThanOrEqual(outcomes[0].rec);
    expect(outcomes[2].rec).toBeGreaterThanOrEqual(outcomes[1].rec);
    // and the first DLT (patient 4) must not raise the recommendation
    expect(outcomes[3].dlt).toBe(1);
    expect(outcomes[3].rec).toBeLessThanOrEqual(outcomes[2].rec);
  });
});

describe("halt handling", () => {
  it("raises the halt banner on a first-patient DLT and blocks queries", async () => {
    const entries = loadFixture("halt.json");
    const fx = fixtureFetch(entries);
    const client = new ApiClient("", fx.fetch);
    const vm = new TrialViewModel();

    const created = await client.createTrial(entries[0].request.body as ConfigDoc);
    vm.applyTrial(created);
    const resp = await client.postOutcome(created.id, "p1", 1, vm.version);
    vm.applyOutcome(resp);
    expect(vm.halted).toBe(true);
    expect(vm.trial!.halted).toBe(true);
    expect(vm.banner?.kind).toBe("halt");
    expect(vm.recommendation).toBeNull();
    expect(vm.nextDoseText).toBe("—");

    await expect(client.recommendation(created.id)).rejects.toMatchObject({
      code: "trial_halted",
      status: 409,
    });
    fx.done();
  });
});

describe("optimistic concurrency", () => {
  it("a double submit with a stale version becomes a conflict banner", async () => {
    const entries = loadFixture("stale.json");
    const fx = fixtureFetch(entries);
    const client = new ApiClient("", fx.fetch);
    const vm = new TrialViewModel();

    const created = await client.createTrial(entries[0].request.body as ConfigDoc);
    vm.applyTrial(created);
    const ok = await client.postOutcome(created.id, "p1", 0, 1);
    vm.applyOutcome(ok);
    expect(vm.version).toBe(2);

    try {
      await client.postOutcome(created.id, "p1", 0, 1); // same token again
      expect.unreachable("second submit must conflict");
    } catch (err) {
      vm.applyError(err);
    }
    expect(vm.banner?.kind).toBe("conflict");
    // state still reflects the single acknowledged event
    expect(vm.version).toBe(2);
    fx.done();
  });
});

describe("covariate what-if panel", () => {
  it("reads per-covariate recommendations from the server only", async () => {
    const entries = loadFixture("whatif.json");
    const fx = fixtureFetch(entries);
    const client = new ApiClient("", fx.fetch);
    const vm = new TrialViewModel();

    const body = entries[0].request.body as { config: ConfigDoc; covariates: number[] };
    const created = await client.createTrial(body.config, body.covariates);
    vm.applyTrial(created);
    expect(vm.covariateDim).toBe(1);
    vm.applyOutcome(await client.postOutcome(created.id, "p1", 0, vm.version));
    expect(vm.recommendation).toBeNull(); // covariate trials carry no global next dose

    const recLow = await client.recommendation(created.id, [0]);
    const recHigh = await client.recommendation(created.id, [200]);
    expect(recLow.continuous).not.toBe(recHigh.continuous);
    expect(entries[2].response.text).toContain(`"continuous":${String(recLow.continuous)}`);
    expect(entries[3].response.text).toContain(`"continuous":${String(recHigh.continuous)}`);

    await expect(client.recommendation(created.id, [250])).rejects.toMatchObject({
      code: "bad_request",
      status: 400,
    });

    const posterior = await client.posterior(created.id, { samples: 61, curveSamples: 9 });
    const curve = posterior.mtd_curve!;
    expect(curve.w.length).toBe(9);
    expect(curve.median.length).toBe(9);
    expect(curve.lo.length).toBe(9);
    expect(curve.hi.length).toBe(9);
    fx.done();
  });
});

describe("api error mapping", () => {
  it("exposes the error envelope", async () => {
    const fx = fixtureFetch([{
      request: { method: "GET", path: "/api/trials/nope", body: null },
      response: {
        status: 404,
        text: '{"code":"not_found","message":"trial \'nope\' not found"}',
      },
    }]);
    const client = new ApiClient("", fx.fetch);
    try {
      await client.getTrial("nope");
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).code).toBe("not_found");
      expect((err as ApiError).status).toBe(404);
    }
    fx.done();
  });
});
