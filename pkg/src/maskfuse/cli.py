"""Command-line front end.

Every subcommand is a thin client over the HTTP service: by default the
request is handled in-process, with ``--server URL`` it goes to a running
instance instead. Human-readable output goes to standard error; output
directories hold the machine-readable artifacts.

Exit codes: 0 success, 1 user or data error, 2 internal invariant
violation.
"""

from __future__ import annotations

import json
import sys
import warnings
from pathlib import Path

import click


class ServiceClient:
    """Uniform POST interface over in-process or remote transport."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(
                create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        resp = self._client.post(path, json=payload)
        try:
            doc = resp.json()
        except ValueError:
            doc = {"error": resp.text}
        return resp.status_code, doc


def _call(server: str | None, path: str, payload: dict) -> dict:
    """POST and return the response body; on failure print the error and
    exit with the mapped code."""
    status, doc = ServiceClient(server).post(path, payload)
    if status >= 400:
        msg = doc.get("error") if isinstance(doc, dict) else None
        click.echo(f"error: {msg if msg is not None else doc}", err=True)
        sys.exit(1 if status < 500 else 2)
    return doc


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        _fail(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        _fail(f"config file {path} is not valid JSON: {e}")
    if not isinstance(doc, dict):
        _fail(f"config file {path} must hold a JSON object")
    return doc


def _fmt(value) -> str:
    return "-" if value is None else str(round(value, 4))


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Send requests to a running service at URL instead of "
                   "handling them in-process.")
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Fuse per-view 2D instance masks into consistent 3D object classes."""
    ctx.obj = server


@main.command()
@click.option("--scene", "scene_manifest", required=True, metavar="MANIFEST",
              help="Scene manifest JSON.")
@click.option("--out", "out_dir", required=True, metavar="DIR",
              help="Output directory for the segmentation result.")
@click.option("--config", "config_path", default=None, metavar="FILE",
              help="JSON config file; explicit flags override its values.")
@click.option("--tau2d-percentile", type=float, default=None)
@click.option("--tau2d-override", type=float, default=None)
@click.option("--min-match-confidence", type=float, default=None)
@click.option("--max-matches-per-pair", type=int, default=None)
@click.option("--tau3d", type=float, default=None)
@click.option("--min-point-confidence", type=float, default=None)
@click.option("--max-cloud-points", type=int, default=None)
@click.option("--reach-radius", type=float, default=None)
@click.option("--workspace-origin", nargs=3, type=float, default=None,
              metavar="X Y Z")
@click.option("--background-mask", "background_masks", multiple=True,
              metavar="INDEX=PATH",
              help="Extra background mask for one image; repeatable.")
@click.option("--max-angle-deg", type=float, default=None,
              help="View-pair gate: camera angle limit.")
@click.option("--max-translation-m", type=float, default=None,
              help="View-pair gate: camera distance limit.")
@click.option("--k-nearest", type=int, default=None,
              help="View-pair gate: neighbours per camera.")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None, help="0 = auto")
@click.option("--debug-partitions", is_flag=True, default=None,
              help="Also write the per-stage partition dump.")
@click.pass_obj
def segment(server, scene_manifest, out_dir, config_path, background_masks,
            workspace_origin, max_angle_deg, max_translation_m, k_nearest,
            **flags) -> None:
    """Segment a scene and write the result layout to --out."""
    doc = _load_config_file(config_path)
    doc.update({k: v for k, v in flags.items() if v is not None})
    if workspace_origin is not None and len(workspace_origin) > 0:
        doc["workspace_origin"] = list(workspace_origin)
    if background_masks:
        parsed: dict[str, str] = {}
        for item in background_masks:
            idx, sep, path = item.partition("=")
            if not sep or not idx.strip().isdigit():
                _fail(f"--background-mask expects INDEX=PATH, got {item!r}")
            parsed[idx.strip()] = path
        doc["background_mask_paths"] = parsed
    pair = {"max_angle_deg": max_angle_deg,
            "max_translation_m": max_translation_m,
            "k_nearest": k_nearest}
    pair = {k: v for k, v in pair.items() if v is not None}
    if pair:
        merged = dict(doc.get("pair_policy") or {})
        merged.update(pair)
        doc["pair_policy"] = merged

    resp = _call(server, "/segment", {
        "scene_manifest": scene_manifest, "out_dir": out_dir, "config": doc})
    click.echo(
        f"{resp['n_foreground_classes']} foreground classes "
        f"({resp['n_classes']} total) in {resp['elapsed_s']:.2f}s "
        f"-> {resp['out_dir']}", err=True)


@main.command("eval")
@click.option("--pred", "pred_dir", required=True, metavar="DIR",
              help="Segmentation result directory.")
@click.option("--scene", "scene_manifest", required=True, metavar="MANIFEST",
              help="Scene manifest with ground-truth maps.")
@click.option("--out", "out_path", default=None, metavar="FILE",
              help="Metrics JSON path (default: PRED/metrics.json).")
@click.option("--no-chamfer", is_flag=True, default=False,
              help="Skip the point-distance metrics.")
@click.option("--chamfer-max-points", type=int, default=None,
              help="Subsample clouds to this size for distance scoring.")
@click.option("--seed", type=int, default=0,
              help="Seed for the scoring subsample.")
@click.option("--expected-objects", default=None, metavar="IDS",
              help="Comma-separated ground-truth ids that must be scored "
                   "even when never visible.")
@click.pass_obj
def eval_(server, pred_dir, scene_manifest, out_path, no_chamfer,
          chamfer_max_points, seed, expected_objects) -> None:
    """Score a result against ground truth and print the summary row."""
    expected = None
    if expected_objects:
        try:
            expected = [int(p) for p in expected_objects.split(",") if p]
        except ValueError:
            _fail(f"--expected-objects must be comma-separated integers, "
                  f"got {expected_objects!r}")
    resp = _call(server, "/eval", {
        "pred_dir": pred_dir, "scene_manifest": scene_manifest,
        "out_path": out_path, "with_chamfer": not no_chamfer,
        "chamfer_max_points": chamfer_max_points, "seed": seed,
        "expected_objects": expected})
    report = resp["report"]
    means = report["means"]
    row = " ".join(_fmt(means[k])
                   for k in ("iou", "f1", "d_chamfer", "iou_sel"))
    click.echo(row, err=True)
    click.echo(f"precision {_fmt(means['precision'])}", err=True)
    click.echo(f"pixel utility {_fmt(report['pixel_utility']['mean'])}",
               err=True)
    for note in report["diagnostics"]:
        click.echo(f"note: {note}", err=True)
    click.echo(f"wrote {resp['out_path']}", err=True)


@main.command()
@click.option("--out", "out_dir", required=True, metavar="DIR",
              help="Directory to write the scene into.")
@click.option("--config", "config_path", default=None, metavar="FILE",
              help="JSON spec file; explicit flags override its values.")
@click.option("--objects", type=int, default=None, help="Object count.")
@click.option("--views", type=int, default=None, help="Camera count.")
@click.option("--overseg", type=int, default=None,
              help="Max fragments per object mask.")
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--dropout", type=float, default=None,
              help="Fraction of exact matches to drop.")
@click.option("--spurious", type=float, default=None,
              help="Junk matches to add, as a fraction of exact ones.")
@click.option("--noise-sigma", type=float, default=None,
              help="Point noise standard deviation in metres.")
@click.option("--seed", type=int, default=None)
@click.pass_obj
def synth(server, out_dir, config_path, objects, views, overseg, width,
          height, dropout, spurious, noise_sigma, seed) -> None:
    """Generate a synthetic benchmark scene with ground truth."""
    doc = _load_config_file(config_path)
    flag_map = {
        "n_objects": objects, "n_views": views, "overseg_k": overseg,
        "width": width, "height": height, "match_dropout": dropout,
        "spurious_rate": spurious, "pointmap_noise_sigma": noise_sigma,
        "seed": seed}
    doc.update({k: v for k, v in flag_map.items() if v is not None})
    resp = _call(server, "/synth", {"out_dir": out_dir, "spec": doc})
    click.echo(
        f"{resp['n_objects']} objects, {resp['n_views']} views "
        f"-> {resp['manifest_path']}", err=True)


@main.command("export-object")
@click.option("--result", "result_dir", required=True, metavar="DIR",
              help="Segmentation result directory.")
@click.option("--image", "image_index", type=int, required=True)
@click.option("--mask", "local_id", type=int, required=True)
@click.option("--out", "out_path", required=True, metavar="FILE",
              help="Destination PLY path.")
@click.pass_obj
def export_object(server, result_dir, image_index, local_id,
                  out_path) -> None:
    """Export the fused cloud of the object behind one input mask."""
    resp = _call(server, "/export-object", {
        "result_dir": result_dir, "image_index": image_index,
        "local_id": local_id, "out_path": out_path})
    if resp["is_background"]:
        click.echo(
            f"mask ({image_index}, {local_id}) was consumed by background; "
            f"wrote empty cloud -> {resp['out_path']}", err=True)
    else:
        click.echo(
            f"class {resp['class_id']} ({resp['n_points']} points) "
            f"-> {resp['out_path']}", err=True)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
