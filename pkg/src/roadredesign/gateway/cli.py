"""Command-line front end. Every subcommand reads and writes the workspace;
failures print one machine-parsable JSON error line to stderr and exit 1.
"""

import dataclasses
import functools
import json
import sys
import uuid
from datetime import datetime
from pathlib import Path

import click
import numpy as np

from .. import errors as E
from ..apcam import CamConfig, compute_cam, threshold_to_mask
from ..classifier import (
    AbmSpec,
    ModelSpec,
    TrainConfig,
    build_model,
    evaluate,
    predict_proba,
    save_checkpoint,
    train,
)
from ..events import AccidentEvent, parse_events
from ..evalreport import (
    RedesignSession,
    aggregate,
    append_session,
    load_sessions,
    score_session,
    write_report_csv,
    write_report_json,
)
from ..hotspot import (
    BBox,
    ClusterParams,
    cluster_centers,
    clusters_to_geojson,
    dbscan,
    sample_non_hotspots,
    write_csv,
    write_geojson,
)
from ..imagery import (
    HOTSPOT,
    NON_HOTSPOT,
    ProviderConfig,
    build_manifest,
    fetch_plan,
    location_key,
    plan_captures,
)
from ..inpaint import (
    DESIGN_NAMES,
    InpaintRequest,
    image_to_png_bytes,
    inpaint as run_inpaint,
    prompt_for,
)
from ..maskkit import load_mask
from ..saliency import (
    SaliencyConfig,
    ap_saliency_ratio,
    batch_saliency_report,
    salient_region,
)
from ..synthetic import toy_dataset, write_toy_records
from .app import create_app, default_inpaint_backend, default_saliency_config
from .workspace import Workspace


def _fail(exc: Exception, code: str) -> None:
    line = json.dumps({"error": {"code": code, "message": str(exc)}})
    click.echo(line, err=True)
    sys.exit(1)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except E.RoadRedesignError as exc:
            _fail(exc, exc.code)
        except ValueError as exc:
            _fail(exc, "INVALID_ARGUMENT")
        except FileNotFoundError as exc:
            _fail(exc, "FILE_NOT_FOUND")

    return wrapper


@click.group()
@click.option(
    "--workspace",
    "workspace_dir",
    envvar="ROADREDESIGN_WORKSPACE",
    default="workspace",
    show_default=True,
    help="Workspace directory (all artifacts live here).",
)
@click.pass_context
def main(ctx, workspace_dir):
    ctx.obj = Workspace(workspace_dir)


def _write_events(events, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            row = dataclasses.asdict(event)
            row["timestamp"] = event.timestamp.isoformat() if event.timestamp else None
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_events(path: Path) -> list:
    if not path.exists():
        raise FileNotFoundError(f"no ingested events at {path}; run ingest first")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            ts = row.get("timestamp")
            row["timestamp"] = datetime.fromisoformat(ts) if ts else None
            out.append(AccidentEvent(**row))
    return out


@main.command()
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@guarded
def ingest(ws: Workspace, csv_path):
    """Parse an accident CSV into the workspace event store."""
    with open(csv_path, "rb") as fh:
        events, skipped = parse_events(fh)
    _write_events(events, ws.events_path)
    click.echo(json.dumps({"ingested": len(events), "skipped": skipped}))


@main.command()
@click.option("--eps", type=float, default=None, help="Cluster radius in meters.")
@click.option("--min-samples", type=int, default=None)
@click.pass_obj
@guarded
def cluster(ws: Workspace, eps, min_samples):
    """DBSCAN the ingested events into hotspot clusters."""
    cfg = ws.config["cluster"]
    params = ClusterParams(
        eps_meters=eps if eps is not None else cfg["eps_meters"],
        min_samples=min_samples if min_samples is not None else cfg["min_samples"],
    )
    events = _read_events(ws.events_path)
    labels = dbscan(events, params)
    clusters = cluster_centers(events, labels)
    write_geojson(clusters, ws.clusters_geojson_path)
    write_csv(clusters, ws.clusters_csv_path)
    n_noise = int(sum(1 for v in labels if v == -1))
    click.echo(json.dumps({"clusters": len(clusters), "noise_points": n_noise}))


@main.command()
@click.option("--fov", type=float, default=None, help="Total field of view per location.")
@click.option("--per-image-fov", type=float, default=None)
@click.option("--pitch", type=float, default=None)
@click.option("--fixture-dir", type=click.Path(file_okay=False), default=None,
              help="Serve imagery from this directory instead of the provider.")
@click.option("--non-hotspots", type=int, default=None,
              help="Sampled non-hotspot locations (default: one per cluster).")
@click.option("--min-distance", type=float, default=None,
              help="Non-hotspot exclusion distance in meters (default: eps).")
@click.option("--seed", type=int, default=None)
@click.option("--test-fraction", type=float, default=None)
@click.pass_obj
@guarded
def fetch(ws: Workspace, fov, per_image_fov, pitch, fixture_dir, non_hotspots,
          min_distance, seed, test_fraction):
    """Fetch imagery for clusters + sampled non-hotspots; build the manifest."""
    capture = ws.config["capture"]
    split = ws.config["split"]
    fov = fov if fov is not None else capture["total_fov"]
    per = per_image_fov if per_image_fov is not None else capture["per_image_fov"]
    pitch = pitch if pitch is not None else capture["pitch"]
    seed = seed if seed is not None else split["seed"]
    test_fraction = test_fraction if test_fraction is not None else split["test_fraction"]

    events = _read_events(ws.events_path)
    if not ws.clusters_geojson_path.exists():
        raise FileNotFoundError("no clusters in workspace; run cluster first")
    geo = json.loads(ws.clusters_geojson_path.read_text(encoding="utf-8"))
    centers = [
        (f["geometry"]["coordinates"][1], f["geometry"]["coordinates"][0])
        for f in geo["features"]
    ]
    if not centers:
        raise E.EmptyDataset("no clusters to fetch imagery for")

    lats = [e.latitude for e in events]
    lons = [e.longitude for e in events]
    pad = 0.01
    bbox = BBox(min(lats) - pad, min(lons) - pad, max(lats) + pad, max(lons) + pad)
    n_non = non_hotspots if non_hotspots is not None else len(centers)
    exclusion = min_distance if min_distance is not None else ws.config["cluster"]["eps_meters"]
    from ..hotspot import HotspotCluster

    cluster_objs = [
        HotspotCluster(
            cluster_id=i, member_ids=(), center_latitude=lat, center_longitude=lon,
            radius_m=0.0,
        )
        for i, (lat, lon) in enumerate(centers)
    ]
    negatives = sample_non_hotspots(bbox, cluster_objs, n_non, exclusion, rng_seed=seed)

    provider = ProviderConfig(
        fixture_dir=Path(fixture_dir) if fixture_dir else None
    )
    records, labels = [], {}
    for lat, lon in centers:
        plan = plan_captures((lat, lon), fov, per, base_heading=0.0, pitch=pitch)
        records.extend(fetch_plan(plan, provider, ws.root))
        labels[location_key(lat, lon)] = HOTSPOT
    for lat, lon in negatives:
        plan = plan_captures((lat, lon), fov, per, base_heading=0.0, pitch=pitch)
        records.extend(fetch_plan(plan, provider, ws.root))
        labels[location_key(lat, lon)] = NON_HOTSPOT

    manifest = build_manifest(records, labels, split_seed=seed, test_fraction=test_fraction)
    ws.store_manifest(manifest)
    click.echo(json.dumps({
        "images": len(manifest.records),
        "train": len(manifest.train_records()),
        "test": len(manifest.test_records()),
    }))


@main.command()
@click.option("--n-per-class", type=int, default=120, show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--test-fraction", type=float, default=None)
@click.pass_obj
@guarded
def synth(ws: Workspace, n_per_class, size, seed, test_fraction):
    """Generate the synthetic red-disk dataset (offline stand-in for fetch)."""
    split = ws.config["split"]
    test_fraction = test_fraction if test_fraction is not None else split["test_fraction"]
    scenes = toy_dataset(n_per_class, n_per_class, seed=seed, size=size)
    records = write_toy_records(scenes, ws.root)
    labels = {location_key(r.latitude, r.longitude): r.label for r in records}
    manifest = build_manifest(records, labels, split_seed=split["seed"],
                              test_fraction=test_fraction)
    ws.store_manifest(manifest)
    click.echo(json.dumps({
        "images": len(manifest.records),
        "train": len(manifest.train_records()),
        "test": len(manifest.test_records()),
    }))


@main.command(name="train")
@click.option("--backbone", type=str, default=None)
@click.option("--abm/--no-abm", default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_obj
@guarded
def train_cmd(ws: Workspace, backbone, abm, epochs, lr, batch_size, seed):
    """Train the hotspot classifier on the workspace manifest."""
    cfg = ws.config["train"]
    backbone = backbone or cfg["backbone"]
    abm = cfg["abm"] if abm is None else abm
    spec = ModelSpec(backbone=backbone, attention=AbmSpec() if abm else None)
    model = build_model(spec)
    manifest = ws.manifest(refresh=True)
    config = TrainConfig(
        epochs=epochs if epochs is not None else cfg["epochs"],
        learning_rate=lr if lr is not None else cfg["learning_rate"],
        batch_size=batch_size if batch_size is not None else cfg["batch_size"],
        seed=seed if seed is not None else cfg["seed"],
    )
    result = train(model, manifest.train_records(), ws.root, config)
    metrics = evaluate(model, manifest.test_records(), ws.root)
    save_checkpoint(model, ws.model_path)
    click.echo(json.dumps({
        "backbone": backbone,
        "abm": abm,
        "epochs": config.epochs,
        "final_train_accuracy": result.final_train_accuracy,
        "test_accuracy": metrics.accuracy,
        "test_f1": metrics.f1,
        "checkpoint": str(ws.model_path),
    }))


@main.command()
@click.option("--image-id", required=True)
@click.option("--method", type=click.Choice(["gradcam", "gradcampp", "scorecam"]),
              default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--min-area", type=int, default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.pass_obj
@guarded
def cam(ws: Workspace, image_id, method, threshold, min_area, out_dir):
    """Write the AP heatmap and thresholded mask for one image."""
    from PIL import Image as PILImage

    cfg = ws.config["cam"]
    config = CamConfig(
        method=method or cfg["method"],
        threshold=threshold if threshold is not None else cfg["threshold"],
        min_area=min_area if min_area is not None else cfg["min_area"],
    )
    model = ws.model()
    image = ws.image_array(image_id)
    result = compute_cam(model, image, method=config.method)
    heat = np.asarray(
        PILImage.fromarray((np.clip(result.heatmap, 0, 1) * 255).astype(np.uint8)).resize(
            (image.shape[1], image.shape[0]), PILImage.BILINEAR
        ),
        dtype=np.float64,
    ) / 255.0
    ap = threshold_to_mask(heat, config.threshold, config.min_area)
    out = Path(out_dir) if out_dir else (ws.root / "cam" / image_id)
    out.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray((heat * 255).astype(np.uint8), mode="L").save(out / "heatmap.png")
    from ..maskkit import save_mask

    save_mask(ap, out / "ap_mask.png", source=f"cam:{config.method}", parents=[image_id])
    click.echo(json.dumps({
        "image_id": image_id,
        "method": config.method,
        "probability": result.probability,
        "heatmap": str(out / "heatmap.png"),
        "ap_mask": str(out / "ap_mask.png"),
    }))


@main.command(name="inpaint")
@click.option("--image-id", required=True)
@click.option("--mask-id", default=None, help="Stored mask id (from the API).")
@click.option("--mask-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Mask PNG on disk (white = region to change).")
@click.option("--design", "design_name", type=click.Choice(list(DESIGN_NAMES)), default=None)
@click.option("--prompt", default=None, help="Free-text prompt (instead of --design).")
@click.option("--cfg-scale", type=float, default=None)
@click.option("--denoise", "denoise_strength", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sampler", "sampler_name", default=None)
@click.option("--n", "n_candidates", type=int, default=None)
@click.pass_obj
@guarded
def inpaint_cmd(ws: Workspace, image_id, mask_id, mask_file, design_name, prompt,
                cfg_scale, denoise_strength, seed, sampler_name, n_candidates):
    """Render redesign candidates for one image synchronously."""
    if (mask_id is None) == (mask_file is None):
        raise ValueError("exactly one of --mask-id / --mask-file is required")
    if design_name is None and prompt is None:
        raise ValueError("one of --design / --prompt is required")
    defaults = ws.config["inpaint"]
    mask = ws.load_mask(mask_id) if mask_id else load_mask(Path(mask_file))
    image = ws.image_array(image_id)
    prompt_text = prompt_for(design_name).full_prompt() if design_name else prompt
    request = InpaintRequest(
        image_id=image_id,
        mask=mask,
        prompt=prompt_text,
        cfg_scale=cfg_scale if cfg_scale is not None else defaults["cfg_scale"],
        denoise_strength=denoise_strength if denoise_strength is not None
        else defaults["denoise_strength"],
        seed=seed,
        sampler_name=sampler_name or defaults["sampler_name"],
        n_candidates=n_candidates or defaults["n_candidates"],
    )
    backend = default_inpaint_backend()
    result = run_inpaint(image, request, backend)
    job_id = f"cli-{uuid.uuid4().hex[:12]}"
    out_dir = ws.candidates_dir(job_id)
    out_dir.mkdir(parents=True, exist_ok=True)
    candidate_ids = []
    for i, candidate in enumerate(result.candidates):
        candidate_id = f"{job_id}-c{i}"
        (out_dir / f"{candidate_id}.png").write_bytes(image_to_png_bytes(candidate))
        candidate_ids.append(candidate_id)
    if mask_id is None:
        mask_id = ws.store_mask(mask, image_id, source=f"file:{mask_file}")
    session = RedesignSession(
        session_id=f"s-{uuid.uuid4().hex[:12]}",
        image_id=image_id,
        cam=ws.config["cam"],
        mask_id=mask_id,
        inpaint={
            "job_id": job_id,
            "prompt": prompt_text,
            "cfg_scale": request.cfg_scale,
            "denoise_strength": request.denoise_strength,
            "seed": request.seed,
            "sampler_name": request.sampler_name,
            "n_candidates": request.n_candidates,
        },
    )
    append_session(session, ws.sessions_path)
    click.echo(json.dumps({
        "session_id": session.session_id,
        "job_id": job_id,
        "candidates": candidate_ids,
        "backend": result.backend_name,
        "warnings": result.warnings,
    }))


@main.command()
@click.argument("session_id")
@click.argument("candidate_id")
@click.pass_obj
@guarded
def select(ws: Workspace, session_id, candidate_id):
    """Choose a candidate for a session and score before/after."""
    sessions = {s.session_id: s for s in load_sessions(ws.sessions_path)}
    if session_id not in sessions:
        raise E.MissingCandidate(f"unknown session_id {session_id!r}")
    session = sessions[session_id]
    candidate_path = ws.candidate_path(session.inpaint["job_id"], candidate_id)
    if not candidate_path.exists():
        raise E.MissingCandidate(f"candidate {candidate_id!r} not in session {session_id}")
    record = ws.record(session.image_id)
    updated = dataclasses.replace(session, chosen_candidate_id=candidate_id)
    scored = score_session(ws.model(), updated, ws.root / record.file_path, candidate_path)
    append_session(scored, ws.sessions_path)
    click.echo(json.dumps({
        "session_id": session_id,
        "p_before": scored.p_before,
        "p_after": scored.p_after,
    }))


@main.command(name="saliency")
@click.option("--image-id", default=None, help="Single image (default: test hotspots).")
@click.option("--method", default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--limit", type=int, default=20, show_default=True)
@click.pass_obj
@guarded
def saliency_cmd(ws: Workspace, image_id, method, threshold, limit):
    """AP-saliency overlap for one image or a batch report over test hotspots."""
    cam_cfg = ws.config["cam"]
    config = CamConfig(
        method=method or cam_cfg["method"],
        threshold=threshold if threshold is not None else cam_cfg["threshold"],
        min_area=cam_cfg["min_area"],
    )
    sal_config = default_saliency_config(ws)
    model = ws.model()
    if image_id is not None:
        image = ws.image_array(image_id)
        from ..apcam import ap_mask_for

        ap = ap_mask_for(model, image, config)
        region = salient_region(image, sal_config, image_id=image_id)
        ratio = ap_saliency_ratio(region.mask, ap)
        click.echo(json.dumps({"image_id": image_id, "ratio": ratio,
                               "source": region.source}))
        return
    records = [r for r in ws.manifest().test_records() if r.label == HOTSPOT][:limit]
    if not records:
        raise E.EmptyDataset("no test hotspot images in manifest")
    items = [(r.image_id, ws.image_array(r.image_id)) for r in records]
    report = batch_saliency_report(items, model, config, sal_config)
    report.to_json(ws.reports_dir / "saliency.json")
    report.to_csv(ws.reports_dir / "saliency.csv")
    click.echo(json.dumps({
        "average": report.average,
        "n_contributing": report.n_contributing,
        "n_excluded": report.n_excluded,
        "report": str(ws.reports_dir / "saliency.json"),
    }))


@main.command()
@click.pass_obj
@guarded
def report(ws: Workspace):
    """Aggregate all scored sessions into the latest evaluation report."""
    scored = [s for s in load_sessions(ws.sessions_path) if s.scored]
    result = aggregate(scored, model_identity=ws.model_identity())
    write_report_json(result, ws.reports_dir / "latest.json")
    write_report_csv(result, ws.reports_dir / "latest.csv")
    click.echo(json.dumps({
        "sessions": len(result.sessions),
        "mean_p_before": result.mean_p_before,
        "mean_p_after": result.mean_p_after,
        "mean_relative_drop_percent": result.mean_relative_drop_percent,
        "drop_of_means_percent": result.drop_of_means_percent,
    }))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--console-dir", type=click.Path(file_okay=False), default=None,
              help="Static console bundle to serve at /.")
@click.pass_obj
@guarded
def serve(ws: Workspace, host, port, console_dir):
    """Run the HTTP gateway."""
    import uvicorn

    app = create_app(ws, console_dir=console_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
