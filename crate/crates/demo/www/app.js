// Wires the three wasm exports (demo_peel, demo_bounds, demo_race) to the
// page. No framework, no build step for the JS itself; only the wasm package
// under ./pkg is generated.

let wasm = null;

async function boot() {
  try {
    const mod = await import("./pkg/codedmm_demo.js");
    await mod.default();
    wasm = mod;
  } catch (e) {
    document.getElementById("banner").style.display = "block";
  }
  initPeel();
  initBounds();
  initRace();
}

const $ = (id) => document.getElementById(id);
const fmtExp = (x) => (x === 0 ? "0" : x.toExponential(2));

// ----------
// 1. Peeling decoder
// ----------

const peel = { missing: new Set(), timers: [] };

function peelDims() {
  const la = Math.max(1, Math.min(8, Number($("peel-la").value) || 1));
  const lb = Math.max(1, Math.min(8, Number($("peel-lb").value) || 1));
  return { la, lb };
}

function renderGrid() {
  peel.timers.forEach(clearTimeout);
  peel.timers = [];
  const { la, lb } = peelDims();
  const grid = $("grid");
  grid.style.gridTemplateColumns = `repeat(${lb + 1}, auto)`;
  grid.replaceChildren();
  for (let a = 0; a <= la; a++) {
    for (let b = 0; b <= lb; b++) {
      const cell = document.createElement("div");
      cell.className = "cell";
      cell.dataset.key = `${a},${b}`;
      if (a === la || b === lb) cell.classList.add("parity");
      cell.textContent = a === la && b === lb ? "P,P" : a === la ? `P,${b}` : b === lb ? `${a},P` : `${a},${b}`;
      if (peel.missing.has(cell.dataset.key)) cell.classList.add("missing");
      cell.addEventListener("click", () => {
        const key = cell.dataset.key;
        peel.missing.has(key) ? peel.missing.delete(key) : peel.missing.add(key);
        clearDecodeMarks();
        cell.classList.toggle("missing");
      });
      grid.appendChild(cell);
    }
  }
}

function clearDecodeMarks() {
  peel.timers.forEach(clearTimeout);
  peel.timers = [];
  $("peel-verdict").textContent = "";
  $("peel-steps").replaceChildren();
  for (const cell of $("grid").children) {
    cell.classList.remove("recovered", "stuck");
    if (peel.missing.has(cell.dataset.key)) cell.classList.add("missing");
  }
}

function cellByKey(key) {
  return [...$("grid").children].find((c) => c.dataset.key === key);
}

function runPeel() {
  if (!wasm) return;
  clearDecodeMarks();
  const { la, lb } = peelDims();
  const cells = [...peel.missing].map((k) => k.split(",").map(Number));
  const out = JSON.parse(wasm.demo_peel(la, lb, JSON.stringify(cells)));
  const verdict = $("peel-verdict");
  if (!out.ok) {
    verdict.innerHTML = `<strong class="bad">error:</strong> ${out.error}`;
    return;
  }
  const steps = $("peel-steps");
  out.steps.forEach((step, i) => {
    const t = setTimeout(() => {
      const cell = cellByKey(`${step.cell[0]},${step.cell[1]}`);
      if (cell) {
        cell.classList.remove("missing");
        cell.classList.add("recovered");
      }
      const li = document.createElement("li");
      li.textContent = `recover (${step.cell[0]}, ${step.cell[1]}) along its ${step.axis}, ${step.fresh_reads} fresh reads`;
      steps.appendChild(li);
    }, 320 * i);
    peel.timers.push(t);
  });
  const done = setTimeout(() => {
    if (out.complete) {
      verdict.innerHTML =
        `<strong class="ok">decoded</strong> with R = ${out.reads} distinct block reads` +
        (cells.length === 1 ? ` (single straggler always costs min(L_A, L_B) = ${out.locality})` : "");
    } else {
      out.unrecovered_systematic.forEach(([a, b]) => {
        const cell = cellByKey(`${a},${b}`);
        if (cell) cell.classList.add("stuck");
      });
      verdict.innerHTML =
        `<strong class="bad">stuck</strong>: ${out.unrecovered_systematic.length} systematic cells sit in ` +
        `fully missing rows and columns, so peeling has no sole survivor to start from`;
    }
  }, 320 * out.steps.length);
  peel.timers.push(done);
}

function initPeel() {
  renderGrid();
  $("peel-la").addEventListener("change", () => { peel.missing.clear(); renderGrid(); clearDecodeMarks(); });
  $("peel-lb").addEventListener("change", () => { peel.missing.clear(); renderGrid(); clearDecodeMarks(); });
  $("peel-run").addEventListener("click", runPeel);
  $("peel-clear").addEventListener("click", () => { peel.missing.clear(); renderGrid(); clearDecodeMarks(); });
}

// ----------
// 2. Failure bound vs overhead
// ----------

function renderBounds() {
  if (!wasm) return;
  const p = Number($("bounds-p").value);
  $("bounds-p-val").textContent = p.toFixed(3);
  const out = JSON.parse(wasm.demo_bounds(p, 2, 14));
  const table = $("bounds-table");
  table.replaceChildren();
  if (!out.ok) {
    table.innerHTML = `<tr><td>error: ${out.error}</td></tr>`;
    return;
  }
  const rows = out.rows;
  const logs = rows.map((r) => Math.log10(Math.max(r.bound, 1e-300)));
  const [lo, hi] = [Math.min(...logs), Math.max(...logs)];
  const maxOver = Math.max(...rows.map((r) => r.redundancy_over_total));
  table.innerHTML =
    "<tr><th>L</th><th>cells n</th><th>Pr[undecodable] &le;</th><th></th><th>parity overhead</th><th></th></tr>";
  rows.forEach((r, i) => {
    const tr = document.createElement("tr");
    const bw = hi > lo ? 4 + 96 * ((logs[i] - lo) / (hi - lo)) : 50;
    const ow = 4 + 96 * (r.redundancy_over_total / maxOver);
    tr.innerHTML =
      `<td>${r.l}</td><td>${r.n}</td>` +
      `<td>${fmtExp(r.bound)}</td><td style="text-align:left"><span class="bar bound" style="width:${bw.toFixed(0)}px"></span></td>` +
      `<td>${(100 * r.redundancy_over_total).toFixed(1)}%</td><td style="text-align:left"><span class="bar overhead" style="width:${ow.toFixed(0)}px"></span></td>`;
    table.appendChild(tr);
  });
}

function initBounds() {
  $("bounds-p").addEventListener("input", renderBounds);
  renderBounds();
}

// ----------
// 3. Coded vs speculative race
// ----------

function lane(label, rep, maxTotal) {
  const row = document.createElement("div");
  row.className = "race-row";
  const segs = ["enc", "comp", "dec"]
    .map((k, i) => {
      const t = [rep.t_enc, rep.t_comp, rep.t_dec][i];
      return `<div class="seg ${k}" style="width:${((100 * t) / maxTotal).toFixed(2)}%" title="${k}: ${t.toFixed(1)} s"></div>`;
    })
    .join("");
  row.innerHTML =
    `<div class="race-label">${label}: T = ${rep.t_total.toFixed(1)} s ` +
    `(encode ${rep.t_enc.toFixed(1)}, compute ${rep.t_comp.toFixed(1)}, decode ${rep.t_dec.toFixed(1)}) &middot; ` +
    `${rep.stragglers} stragglers, ${rep.recomputed_tasks} recomputed, ${rep.relaunched_tasks} relaunched</div>` +
    `<div class="lane">${segs}</div>`;
  return row;
}

function runRace() {
  if (!wasm) return;
  const seed = Number($("race-seed").value) || 0;
  const p = Number($("race-p").value);
  const factor = Number($("race-factor").value);
  const q = Number($("race-q").value);
  const out = JSON.parse(wasm.demo_race(seed, p, factor, q));
  const box = $("race-out");
  const verdict = $("race-verdict");
  box.replaceChildren();
  if (!out.ok) {
    verdict.innerHTML = `<strong class="bad">error:</strong> ${out.error}`;
    return;
  }
  const maxTotal = Math.max(out.coded.t_total, out.speculative.t_total);
  box.appendChild(lane("coded", out.coded, maxTotal));
  box.appendChild(lane("speculative", out.speculative, maxTotal));
  const ratio = out.winner === "coded" ? out.speedup : 1 / out.speedup;
  verdict.innerHTML =
    `<strong>${out.winner}</strong> wins this seed, ${ratio.toFixed(2)}x faster end to end. ` +
    `Both strategies return the exact product (coded relative error ${fmtExp(out.rel_error_coded)}).`;
}

function initRace() {
  for (const [id, label, digits] of [
    ["race-p", "race-p-val", 3],
    ["race-factor", "race-factor-val", 1],
    ["race-q", "race-q-val", 2],
  ]) {
    $(id).addEventListener("input", () => {
      $(label).textContent = Number($(id).value).toFixed(digits);
    });
  }
  $("race-run").addEventListener("click", runRace);
  runRace();
}

boot();
