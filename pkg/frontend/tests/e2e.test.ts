// @vitest-environment jsdom
//
// Drives the built client against a live service process end to end.
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { TuringApi } from "../src/api.js";
import { TestApp } from "../src/app.js";
import { mountDom, until } from "./dom.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

const MAKE_POOLS = `
import sys
import numpy as np
from pathlib import Path
from tumorsynth.grids import Mask3, Volume3
from tumorsynth.nifti import save_nifti

base = Path(sys.argv[1])
rng = np.random.default_rng(0)
for pool, offset in (("real", 0), ("synthetic", 40)):
    out = base / pool
    out.mkdir(parents=True)
    for i in range(2):
        dims = (16, 16, 12)
        image = Volume3(rng.normal(60 + offset, 20, dims).astype("float32"),
                        spacing=(1.0, 1.0, 2.0))
        label = np.zeros(dims, bool)
        label[5:9, 5:9, 3:7] = True
        save_nifti(image, out / f"case{i}_image.nii.gz")
        save_nifti(Mask3(label, spacing=(1.0, 1.0, 2.0)),
                   out / f"case{i}_label.nii.gz")
`;

let server: ChildProcess | null = null;

async function serverReady(): Promise<void> {
  await until(() => serverUp, 30000);
}

let serverUp = false;

beforeAll(async () => {
  const base = mkdtempSync(join(tmpdir(), "turing-e2e-"));
  const made = spawnSync("python3", ["-c", MAKE_POOLS, base]);
  if (made.status !== 0) {
    throw new Error(`pool setup failed: ${made.stderr}`);
  }
  server = spawn("synth", [
    "turing-serve",
    "--real", join(base, "real"),
    "--synthetic", join(base, "synthetic"),
    "--port", String(PORT),
    "--seed", "7",
  ], { stdio: "ignore" });

  const probe = async () => {
    try {
      const response = await fetch(`${BASE}/sessions`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ n_trials: 1 }),
      });
      serverUp = response.ok;
    } catch {
      serverUp = false;
    }
  };
  for (let i = 0; i < 120 && !serverUp; i++) {
    await probe();
    if (!serverUp) await new Promise((r) => setTimeout(r, 250));
  }
  await serverReady();
}, 45000);

afterAll(() => {
  server?.kill();
});

describe("live service end to end", () => {
  it("completes a 10-trial session; displayed accuracy equals the server score", async () => {
    mountDom();
    const api = new TuringApi(BASE, fetch);
    const app = new TestApp(api, document);
    app.bind();

    (document.getElementById("n-trials") as HTMLInputElement).value = "10";
    (document.getElementById("start-button") as HTMLButtonElement).click();
    await until(() => app.state === "awaiting", 10000);

    const real = document.getElementById("verdict-real") as HTMLButtonElement;
    const synthetic = document.getElementById(
      "verdict-synthetic",
    ) as HTMLButtonElement;
    for (let i = 0; i < 10; i++) {
      const index = app.trial!.trial_index;
      (i % 2 === 0 ? real : synthetic).click();
      await until(
        () => app.state === "complete"
          || (app.state === "awaiting" && app.trial!.trial_index === index + 1),
        10000,
      );
    }
    expect(app.state).toBe("complete");

    const scored = await api.score(app.sessionId!);
    const displayed = document.getElementById("accuracy")!.textContent!;
    expect(displayed).toBe(
      `Accuracy ${(100 * scored.accuracy).toFixed(0)}% `
      + `(${scored.correct}/${scored.n_trials})`,
    );
    const shownCells = [
      "cell-real-real", "cell-real-synthetic",
      "cell-synthetic-real", "cell-synthetic-synthetic",
    ].map((id) => parseInt(document.getElementById(id)!.textContent!, 10));
    expect(shownCells).toEqual([
      scored.confusion.real_real,
      scored.confusion.real_synthetic,
      scored.confusion.synthetic_real,
      scored.confusion.synthetic_synthetic,
    ]);
  }, 30000);

  it("double-click on a verdict records exactly one answer", async () => {
    mountDom();
    const api = new TuringApi(BASE, fetch);
    const app = new TestApp(api, document);
    app.bind();

    await app.start({ n_trials: 5 });
    await until(() => app.state === "awaiting", 10000);
    const button = document.getElementById("verdict-real") as HTMLButtonElement;
    button.click();
    button.click();
    await until(
      () => app.state === "awaiting" && app.trial!.trial_index === 1,
      10000,
    );

    const partial = await fetch(
      `${BASE}/sessions/${app.sessionId}/score?partial=true`,
    ).then((r) => r.json());
    expect(partial.answered).toBe(1);
  }, 30000);

  it("serves trial images as PNG", async () => {
    const api = new TuringApi(BASE, fetch);
    const info = await api.createSession({ n_trials: 2 });
    const trial = await api.nextTrial(info.session_id);
    const image = await fetch(api.imageUrl(trial.image_url));
    expect(image.status).toBe(200);
    expect(image.headers.get("content-type")).toBe("image/png");
    const bytes = new Uint8Array(await image.arrayBuffer());
    expect([...bytes.slice(1, 4)]).toEqual([0x50, 0x4e, 0x47]); // "PNG"
  }, 15000);
});
