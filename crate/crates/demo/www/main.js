import init, { tile_info, heatmap, fit_linreg } from "./pkg/hedonic_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(id, f) {
  try {
    $(id).textContent = JSON.stringify(JSON.parse(f()), null, 2);
  } catch (e) {
    $(id).textContent = "error: " + e;
  }
}

function sampleCsv() {
  const rows = ["id,lat,lon,price,sqft,beds,age"];
  for (let i = 0; i < 40; i++) {
    const sqft = 900 + ((i * 137) % 1800);
    const beds = 1 + (i % 4);
    const age = (i * 7) % 60;
    const noise = Math.sin(i * 12.9898) * 0.04;
    const price = Math.exp(11.2 + 0.00045 * sqft + 0.04 * beds - 0.003 * age + noise);
    rows.push(`h${i},35.6,-82.55,${price.toFixed(0)},${sqft},${beds},${age}`);
  }
  return rows.join("\n");
}

function renderHeatmap() {
  let result;
  try {
    result = heatmap(num("seed"), num("window"), num("stride"));
  } catch (e) {
    $("heat-out").textContent = "error: " + e;
    return;
  }
  const view = JSON.parse(result.summary);
  const ctx = $("heat").getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(result.rgba), view.size, view.size), 0, 0);
  const [x, y, w, h] = view.rooftop;
  ctx.strokeStyle = "#0f0";
  ctx.lineWidth = 1;
  ctx.strokeRect(x + 0.5, y + 0.5, w - 1, h - 1);
  $("heat-out").textContent =
    `grid ${view.grid[0]}x${view.grid[1]}, rooftop at (${x}, ${y}) ${w}x${h}\n` +
    `top-decile heat inside the window-dilated rooftop: ${(100 * view.top_decile_inside).toFixed(0)}%`;
}

await init();
$("csv").value = sampleCsv();
$("tile-go").onclick = () => show("tile-out", () => tile_info(num("lat"), num("lon"), num("zoom"), num("extent")));
$("heat-go").onclick = renderHeatmap;
$("fit-go").onclick = () => show("fit-out", () => fit_linreg($("csv").value));
$("tile-go").click();
renderHeatmap();
