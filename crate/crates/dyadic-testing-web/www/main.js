import init, { maximal_function, sample_instance, testing_constants, stopping_family } from "./pkg/dyadic_testing_web.js";

const $ = (id) => document.getElementById(id);
const numbers = (text) => new Float64Array(text.split(/[\s,]+/).filter(Boolean).map(Number));
const int = (id) => parseInt($(id).value, 10);
const big = (id) => BigInt($(id).value);

function show(id, json) {
  const value = JSON.parse(json);
  $(id).textContent = value.error ? `error: ${value.error}` : JSON.stringify(value, null, 2);
}

function tree(node, indent = "") {
  const line = `${indent}${node.cube}  mass ${node.mass.toPrecision(4)}  children ${node.child_mass_fraction.toPrecision(3)}`;
  return [line, ...node.children.map((c) => tree(c, indent + "  "))].join("\n");
}

await init();

$("mf-run").onclick = () =>
  show("mf-out", maximal_function(int("mf-depth"), int("mf-branching"), numbers($("mf-values").value), numbers($("mf-masses").value)));

$("tc-sample").onclick = () => {
  $("tc-instance").value = JSON.stringify(JSON.parse(sample_instance(big("tc-seed"), int("tc-depth"))), null, 2);
};

$("tc-run").onclick = () => {
  const rows = JSON.parse(testing_constants($("tc-instance").value, int("tc-starts"), big("tc-seed")));
  $("tc-out").textContent = rows.error
    ? `error: ${rows.error}`
    : rows.map((r) => `${r.name.padEnd(20)} ${r.value.toPrecision(8)}  ${r.method}`).join("\n");
};

$("sf-run").onclick = () => {
  const out = JSON.parse(stopping_family($("sf-tag").value, int("sf-depth"), int("sf-branching"), numbers($("sf-values").value), new Float64Array()));
  $("sf-out").textContent = out.error ? `error: ${out.error}` : tree(out);
};

$("tc-sample").onclick();
