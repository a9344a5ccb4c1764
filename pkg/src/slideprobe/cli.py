"""Command-line driver.

The CLI is a thin client of the HTTP API: with ``--server`` it talks to
a running service, otherwise it mounts the app in-process over an ASGI
transport, so both paths exercise exactly the same endpoints.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import httpx


def _load_config(path: str | None) -> dict:
    """key=value config file for VLM endpoint / model / API key env var."""
    cfg = {}
    if path:
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            cfg[key.strip()] = value.strip()
    return cfg


class ApiClient:
    def __init__(self, data_dir: str, server: str | None, as_json: bool):
        self.as_json = as_json
        if server:
            self.client = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from starlette.testclient import TestClient

            from .service import create_app

            self.client = TestClient(create_app(data_dir))

    def call(self, method: str, url: str, **kwargs) -> dict:
        resp = self.client.request(method, url, **kwargs)
        if resp.status_code >= 400:
            try:
                err = resp.json()
            except ValueError:
                err = {"error": "HTTPError", "detail": resp.text}
            err["status"] = resp.status_code
            if self.as_json:
                click.echo(json.dumps(err), err=True)
            else:
                click.echo(f"error {resp.status_code}: {err.get('detail')}", err=True)
            sys.exit(1)
        return resp.json()

    def emit(self, payload: dict, human: str | None = None) -> None:
        if self.as_json or human is None:
            click.echo(json.dumps(payload, indent=2, sort_keys=True))
        else:
            click.echo(human)


@click.group()
@click.option("--data-dir", default="data", show_default=True,
              help="Workbench data directory (ignored with --server).")
@click.option("--server", default=None, help="Base URL of a running service.")
@click.option("--json", "as_json", is_flag=True, help="Emit machine-readable JSON.")
@click.pass_context
def main(ctx, data_dir, server, as_json):
    """Explanation-falsification workbench for pathology classifiers."""
    ctx.obj = ApiClient(data_dir, server, as_json)


@main.command()
@click.argument("image", type=click.Path(exists=True))
@click.option("--mpp", type=float, required=True, help="Microns per pixel at level 0.")
@click.option("--id", "slide_id", default=None, help="Slide id (default: random).")
@click.option("--tile-size", type=int, default=256, show_default=True)
@click.pass_obj
def ingest(api: ApiClient, image, mpp, slide_id, tile_size):
    """Ingest a PNG/JPEG/TIFF raster into a tiled pyramid."""
    data = {"mpp": str(mpp), "tile_size": str(tile_size)}
    if slide_id:
        data["slide_id"] = slide_id
    with open(image, "rb") as f:
        meta = api.call("POST", "/slides", data=data,
                        files={"file": (Path(image).name, f)})
    api.emit(meta, meta["slide_id"])


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.pass_context
def serve(ctx, host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    data_dir = ctx.parent.params["data_dir"]
    uvicorn.run(create_app(data_dir), host=host, port=port)


@main.command()
@click.argument("slide_id")
@click.option("--x", type=float, required=True)
@click.option("--y", type=float, required=True)
@click.option("--size", type=int, default=224, show_default=True)
@click.option("--mpp", type=float, default=1.14, show_default=True)
@click.pass_obj
def score(api: ApiClient, slide_id, x, y, size, mpp):
    """Score one patch: logit plus a saliency summary."""
    body = {"center_x0": x, "center_y0": y, "size_px": size, "target_mpp": mpp}
    res = api.call("POST", f"/slides/{slide_id}/score", json=body)
    sal = res["saliency"]
    api.emit(
        res,
        f"logit {res['logit']:.4f}  saliency {sal['rows']}x{sal['cols']} "
        f"max {max(sal['values']):.2f} (backend {res['backend_id']})",
    )


@main.command()
@click.argument("slide_id")
@click.option("--x", type=float, required=True)
@click.option("--y", type=float, required=True)
@click.option("--dx", type=float, default=1.0, show_default=True)
@click.option("--dy", type=float, default=0.0, show_default=True)
@click.option("--stride", type=float, default=112.0, show_default=True)
@click.option("--steps", type=int, default=3, show_default=True)
@click.option("--csv", "csv_out", type=click.Path(), default=None,
              help="Also export the trace as CSV.")
@click.pass_obj
def sweep(api: ApiClient, slide_id, x, y, dx, dy, stride, steps, csv_out):
    """Run a sliding-window sweep and print the logit sequence."""
    body = {
        "anchor_x0": x, "anchor_y0": y, "direction": [dx, dy],
        "stride_px": stride, "steps": steps,
    }
    trace = api.call("POST", f"/slides/{slide_id}/sweeps", json=body)
    logits = [p["logit"] for p in trace["points"]]
    human = f"trace {trace['trace_id']}: " + " ".join(
        "null" if l is None else f"{l:.3f}" for l in logits
    )
    if csv_out:
        resp = api.client.get(f"/sweeps/{trace['trace_id']}/csv")
        Path(csv_out).write_text(resp.text)
        human += f"\ncsv written to {csv_out}"
    api.emit(trace, human)


@main.command("eval")
@click.option("--dataset", "dataset_arg", required=True,
              help="Dataset JSON file, or the id of a stored dataset.")
@click.option("--explanations", "explanations_arg", required=True,
              help="Explanations JSON file, or comma-separated stored ids.")
@click.option("--vlm", type=click.Choice(["mock", "http"]), default="mock",
              show_default=True)
@click.option("--thresholds", default="0,1,3", show_default=True)
@click.option("--boot", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--mock-seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="key=value file with vlm_endpoint / vlm_model / api_key_env.")
@click.option("--out", "out_dir", default="eval-results", show_default=True)
@click.pass_obj
def eval_cmd(api: ApiClient, dataset_arg, explanations_arg, vlm, thresholds, boot,
             seed, mock_seed, config_path, out_dir):
    """Judge explanations over a dataset and write AUROC result files."""
    if Path(dataset_arg).exists():
        body = json.loads(Path(dataset_arg).read_text())
        api.call("POST", "/datasets", json=body)
        dataset_id = body["id"]
    else:
        dataset_id = dataset_arg

    if Path(explanations_arg).exists():
        explanation_ids = []
        for d in json.loads(Path(explanations_arg).read_text()):
            api.call("POST", "/explanations", json=d)
            explanation_ids.append(d["id"])
    else:
        explanation_ids = [e.strip() for e in explanations_arg.split(",")]

    cfg = _load_config(config_path)
    vlm_cfg = {"backend": "mock", "mock_seed": mock_seed}
    if vlm == "http":
        vlm_cfg = {
            "backend": "http_chat",
            "endpoint": cfg.get("vlm_endpoint", ""),
            "model_name": cfg.get("vlm_model", ""),
            "api_key_env": cfg.get("api_key_env", "VLM_API_KEY"),
        }
        if cfg.get("rate_limit_per_min"):
            vlm_cfg["rate_limit_per_min"] = int(cfg["rate_limit_per_min"])

    req = {
        "dataset_id": dataset_id,
        "explanation_ids": explanation_ids,
        "thresholds": [float(t) for t in thresholds.split(",")],
        "n_boot": boot,
        "seed": seed,
        "vlm": vlm_cfg,
    }
    job = api.call("POST", "/evaluations", json=req)
    while job["status"] in ("queued", "running"):
        time.sleep(0.05)
        job = api.call("GET", f"/evaluations/{job['job_id']}")
    if job["status"] == "failed":
        payload = {"error": "EvalFailed", "detail": job["error"]}
        click.echo(json.dumps(payload) if api.as_json else f"error: {job['error']}",
                   err=True)
        sys.exit(1)

    result = job["result"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for eid, text in result["result_files"].items():
        (out / f"{eid}.json").write_text(text)
    for eid, text in result["samples_csv"].items():
        (out / f"{eid}_samples.csv").write_text(text)
    (out / "comparison.md").write_text(result["markdown"])
    api.emit(
        {"job_id": job["job_id"], "out_dir": str(out),
         "explanations": explanation_ids, "errors": result["errors"]},
        result["markdown"],
    )


@main.command("make-fixtures")
@click.option("--seed", type=int, default=11, show_default=True)
@click.pass_obj
def make_fixtures(api: ApiClient, seed):
    """Generate the bundled synthetic slides, dataset and explanations."""
    created = api.call("POST", "/fixtures", params={"seed": seed})
    api.emit(created, json.dumps(created, indent=2))


if __name__ == "__main__":
    main()
