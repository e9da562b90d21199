"""Command-line entry point.

Subcommands: denoise, augment, split, train, eval, explain, classify,
serve, export-features. Exit codes: 0 success, 1 expected failure (bad
input, missing files, usage errors), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .augment import (AugmentKind, AugmentationSpec, BadFactor, MissingImage,
                      augment_image)
from .catalog import (CorruptContainer, DatasetManifest, ManifestEntry,
                      Partition, TooFewSpecimens, checkpoint_read,
                      manifest_read_csv, manifest_read_json,
                      manifest_write_csv, split)
from .denoise import ConfigError, DenoiseConfig, Exact, Windowed, denoise
from .evaluation import LabeledImage, Protocol_, SpecimenSet, UnknownLabel, evaluate
from .explain import BadClass, cam, raw_map_csv
from .heads import (HeadName, MissingFeature, build_head, export_features,
                    standin_backbone)
from .imagecore import DecodeError, ImageTensor, decode_image, encode_image
from .pipeline import DirectClassifier, build_feature_dataset, preprocess_image
from .taxonomy import SPECIES_ORDER, genus_of
from .train import (CLRSchedule, EarlyStopping, EmptyDataset, PhasePlan,
                    TrainConfig, fit, write_run_dir)

EXPECTED_ERRORS = (DecodeError, ConfigError, BadFactor, MissingImage,
                   TooFewSpecimens, CorruptContainer, UnknownLabel, BadClass,
                   MissingFeature, EmptyDataset, FileNotFoundError,
                   IsADirectoryError, PermissionError)


class CliError(Exception):
    """Expected failure surfaced to the user; exits with code 1."""


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage problems through exit code 1
        raise _UsageError(message)


def _read_image(path: str) -> ImageTensor:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such image: {path}")
    return decode_image(p.read_bytes())


def _write_image(img: ImageTensor, path: str) -> None:
    fmt = Path(path).suffix.lstrip(".").lower() or "png"
    Path(path).write_bytes(encode_image(img, fmt))


def _read_manifest(path: str) -> DatasetManifest:
    if path.endswith(".json"):
        return manifest_read_json(path)
    return manifest_read_csv(path)


def _entry_loader(entry: ManifestEntry) -> ImageTensor:
    if not entry.path:
        raise CliError(f"manifest entry {entry.image_id} has no path")
    return _read_image(entry.path)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_denoise(args) -> int:
    search = Exact() if args.window == "exact" else Windowed(int(args.window))
    cfg = DenoiseConfig(patch_radius=args.patch, filtering_degree_h=args.h,
                        search=search)
    img = _read_image(args.infile)
    _write_image(denoise(img, cfg), args.out)
    print(f"denoised {args.infile} -> {args.out}")
    return 0


def cmd_augment(args) -> int:
    manifest = _read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = AugmentationSpec(seed=args.seed)
    new_entries: list[ManifestEntry] = list(manifest.entries)
    count = 0
    for entry in manifest.partition(Partition.TRAIN):
        img = _entry_loader(entry)
        aug = augment_image(img, entry.image_id, spec)
        for variant in aug.variants:
            variant_id = f"{entry.image_id}__{variant.kind.value}"
            path = out_dir / f"{variant_id}.png"
            _write_image(variant.image, str(path))
            sidecar = {"source_id": entry.image_id, "kind": variant.kind.value,
                       "factor": variant.factor}
            path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
            new_entries.append(ManifestEntry(
                image_id=variant_id, specimen_id=entry.specimen_id,
                label=entry.label, partition=Partition.TRAIN,
                augmented_from=entry.image_id, path=str(path)))
            count += 1
    manifest_write_csv(DatasetManifest(tuple(new_entries)),
                       out_dir / "manifest.csv")
    print(f"wrote {count} variants and {out_dir / 'manifest.csv'}")
    return 0


def cmd_split(args) -> int:
    manifest = _read_manifest(args.manifest)
    result = split(manifest.entries, val_fraction=args.val_fraction,
                   seed=args.seed)
    manifest_write_csv(result, args.out)
    n_val = len(result.partition(Partition.VALIDATION))
    print(f"split {len(result.entries)} images: {n_val} validation -> {args.out}")
    return 0


_HEAD_CHOICES = {
    "genus": HeadName.GENUS,
    "aedes": HeadName.AEDES,
    "anopheles": HeadName.ANOPHELES,
    "culex": HeadName.CULEX,
    "species-only": HeadName.SPECIES_ONLY,
}


def _label_mapper(head_name: HeadName):
    if head_name is HeadName.GENUS:
        def to_genus(entry: ManifestEntry) -> str:
            try:
                return genus_of(entry.label).value
            except ValueError:
                return entry.label  # already genus-level (or synthetic)
        return to_genus
    return lambda entry: entry.label


def cmd_train(args) -> int:
    manifest = _read_manifest(args.manifest)
    head_name = _HEAD_CHOICES[args.head]
    model = build_head(head_name, seed=args.seed, dropout_rate=args.dropout,
                       use_batchnorm=not args.no_batchnorm)
    backbone = standin_backbone(args.backbone_seed)
    cfg = TrainConfig(
        plan=PhasePlan(
            phase1_epochs=args.epochs1,
            phase2_epochs=args.epochs2,
            phase1_lr=CLRSchedule(),
            early_stopping=EarlyStopping(patience=args.patience)
            if args.patience else None,
        ),
        batch_size=args.batch_size,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    data = build_feature_dataset(
        manifest, _entry_loader, backbone, model.spec.endpoint.name,
        model.class_labels, label_of=_label_mapper(head_name),
        augment_spec=AugmentationSpec(seed=args.seed) if args.augment else None)
    result = fit(model, backbone, data, cfg)
    write_run_dir(args.run_dir, cfg, result, head_name=head_name.value)
    last = result.history[-1]
    print(f"trained {args.head}: {len(result.history)} epochs, "
          f"val_acc={last.val_acc:.4f} -> {args.run_dir}")
    return 0


def _load_classifier(model_path: str, backbone_seed: int) -> DirectClassifier:
    params, meta = checkpoint_read(model_path)
    model = build_head(HeadName(meta["head_name"]))
    model.load_state_dict(params)
    return DirectClassifier(standin_backbone(backbone_seed), model)


def _truth_label(raw: str):
    """Species labels become TaxonLabel so genus-grain heads resolve them."""
    from .taxonomy import TaxonLabel

    return TaxonLabel.from_species(raw) if raw in SPECIES_ORDER else raw


def cmd_eval(args) -> int:
    classifier = _load_classifier(args.model, args.backbone_seed)
    manifest = _read_manifest(args.manifest)
    entries = manifest.partition(Partition.TEST) or list(manifest.entries)
    protocol = Protocol_(args.protocol)
    if protocol is Protocol_.PER_SET:
        by_specimen: dict[str, list[ManifestEntry]] = {}
        for e in entries:
            by_specimen.setdefault(e.specimen_id, []).append(e)
        dataset = []
        for sid, group in sorted(by_specimen.items()):
            if len(group) != 3:
                raise CliError(
                    f"specimen {sid} has {len(group)} images; sets need exactly 3")
            dataset.append(SpecimenSet(
                sid, tuple(_entry_loader(e) for e in group), "", "",
                _truth_label(group[0].label)))
    else:
        dataset = [LabeledImage(_entry_loader(e), _truth_label(e.label))
                   for e in entries]
    report = evaluate(dataset, classifier, protocol)
    if args.json_out:
        Path(args.json_out).write_text(report.to_json())
    if args.csv_out:
        Path(args.csv_out).write_text(report.confusion.to_csv())
    print(report.to_json() if args.json else report.to_text())
    return 0


def cmd_explain(args) -> int:
    classifier = _load_classifier(args.model, args.backbone_seed)
    img = preprocess_image(_read_image(args.image))
    labels = classifier.model.class_labels
    if args.class_name is None:
        class_index = None
    elif args.class_name.isdigit():
        class_index = int(args.class_name)
    else:
        if args.class_name not in labels:
            raise CliError(f"unknown class {args.class_name!r}; "
                           f"choose from {list(labels)}")
        class_index = labels.index(args.class_name)
    result = cam(classifier.model, classifier.backbone, img, class_index)
    _write_image(result.overlay, args.out)
    csv_path = Path(args.out).with_suffix(".csv")
    csv_path.write_text(raw_map_csv(result))
    print(f"class {labels[result.class_index]}: overlay -> {args.out}, "
          f"raw map -> {csv_path}")
    return 0


def cmd_classify(args) -> int:
    classifier = _load_classifier(args.model, args.backbone_seed)
    labels = classifier.class_labels
    if args.set:
        if len(args.set) != 3:
            raise CliError("set requires exactly three images")
        images = tuple(_read_image(p) for p in args.set)
        from .evaluation import predict_set

        s = SpecimenSet("cli", images, "", "", labels[0])
        probs, idx = predict_set(s, classifier.probs)
    else:
        probs = classifier.probs(_read_image(args.image))
        idx = int(np.argmax(probs))
    species = labels[idx]
    payload = {
        "species": species,
        "genus": genus_of(species).value if species in SPECIES_ORDER else None,
        "probabilities": {c: float(p) for c, p in zip(labels, probs)},
    }
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"predicted: {species}")
        for c, p in sorted(payload["probabilities"].items(),
                           key=lambda kv: -kv[1]):
            print(f"  {c:<18} {p:.4f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    cfg = ServiceConfig.from_json(args.config)
    app = create_app(cfg)
    uvicorn.run(app, host=cfg.bind_host, port=cfg.bind_port, log_level="info")
    return 0


def cmd_export_features(args) -> int:
    manifest = _read_manifest(args.manifest)
    backbone = standin_backbone(args.backbone_seed)
    endpoints = args.endpoints or list(
        {"block17_10_conv", "conv2d_93", "block17_8_conv", "conv2d_111"})
    images = [preprocess_image(_entry_loader(e)) for e in manifest.entries]
    n = export_features(images, backbone, sorted(endpoints), args.out)
    print(f"archived {n} feature tensors -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="vectorwatch",
                     description="Mosquito vector surveillance pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="non-local-means denoise one image")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--h", type=float, default=10.0,
                   help="filtering degree (default 10)")
    p.add_argument("--patch", type=int, default=3,
                   help="patch radius (default 3 = 7x7)")
    p.add_argument("--window", default="10",
                   help="search radius, or 'exact' (default 10 = 21x21)")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("augment", help="expand a manifest x5 with seeded variants")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="specimen-grouped stratified split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-fraction", type=float, default=0.30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a classifier head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--head", choices=sorted(_HEAD_CHOICES), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backbone-seed", type=int, default=0)
    p.add_argument("--epochs1", type=int, default=50)
    p.add_argument("--epochs2", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--no-batchnorm", action="store_true")
    p.add_argument("--patience", type=int, default=50,
                   help="early-stopping patience; 0 disables")
    p.add_argument("--augment", action="store_true",
                   help="apply x5 augmentation to the train partition")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=["per-image", "per-set"],
                   default="per-image")
    p.add_argument("--backbone-seed", type=int, default=0)
    p.add_argument("--json", action="store_true",
                   help="print the JSON report instead of text")
    p.add_argument("--json-out", help="also write the JSON report here")
    p.add_argument("--csv-out", help="also write the confusion matrix CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="write an activation-map overlay")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_name", default=None,
                   help="class name or index (default: predicted class)")
    p.add_argument("--out", required=True)
    p.add_argument("--backbone-seed", type=int, default=0)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("classify", help="classify one image or a 3-image set")
    p.add_argument("--model", required=True)
    p.add_argument("--image", help="single image path")
    p.add_argument("--set", nargs="+", help="exactly three image paths")
    p.add_argument("--backbone-seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("serve", help="run the surveillance HTTP service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-features", help="archive backbone features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backbone-seed", type=int, default=0)
    p.add_argument("--endpoints", nargs="*")
    p.set_defaults(func=cmd_export_features)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "classify" and bool(args.image) == bool(args.set):
            raise CliError("provide exactly one of --image or --set")
        return args.func(args)
    except (CliError, *EXPECTED_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - anything else is an internal error
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
