"""Seeded end-to-end pipelines over the experiment grid.

Stage order for run-all: gen-data, pretrain, probe, select, evaluator,
then finetune+eval per (strategy, seed) cell, bench, report, and optionally
the cross-corpus transfer phase (which reuses domain-1's selection and must
never re-probe). Every artifact embeds the config hash and every stage
verifies it before consuming an upstream file.
"""

import json
import os
import shutil

import numpy as np

from csplab import charprobe as cp
from csplab import codeclm as clm
from csplab import evalkit as ek
from csplab import ftstrat as fs
from csplab import synthworld as sw
from csplab.lmtrain import train_lm, optimizer_state
from .checkpoint import load_arrays, load_checkpoint, save_arrays, save_checkpoint
from .config import ExperimentConfig


class ConfigMismatchError(Exception):
    pass


class StageLog:
    """Stage sequence + timestamped messages, mirrored to files."""

    def __init__(self, out_dir=None, echo=True):
        self.stages = []
        self.out_dir = out_dir
        self.echo = echo

    def stage(self, name):
        self.stages.append(name)
        if self.out_dir:
            with open(os.path.join(self.out_dir, "stages.log"), "a") as f:
                f.write(name + "\n")
        self.log(f"== stage: {name}")

    def log(self, msg):
        if self.echo:
            print(msg, flush=True)
        if self.out_dir:
            with open(os.path.join(self.out_dir, "run.log"), "a") as f:
                f.write(msg + "\n")


class RunPaths:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        j = lambda *p: os.path.join(out_dir, *p)
        self.config = j("config.json")
        self.domain = j("domain.json")
        self.corpora_dir = j("corpora")
        self.corpora_index = j("corpora", "corpora.json")
        self.pretrained = j("pretrained.ckpt")
        self.weights = j("weights.json")
        self.plans_dir = j("plans")
        self.evaluator = j("evaluator.ckpt")
        self.rows_dir = j("rows")
        self.timing = j("timing.json")
        self.report_csv = j("report.csv")
        self.table2_csv = j("table2.csv")
        self.curves_json = j("curves.json")
        self.timing_csv = j("timing.csv")
        self.ablation_csv = j("ablation.csv")
        self.transfer_report_csv = j("transfer-report.csv")

    def plan(self, strategy):
        return os.path.join(self.plans_dir, f"{strategy}.json")

    def rows(self, strategy, seed, transfer=False):
        pre = "transfer-" if transfer else ""
        return os.path.join(self.rows_dir, f"{pre}{strategy}-{seed}.json")

    def ensure(self):
        for d in (self.out_dir, self.corpora_dir, self.plans_dir, self.rows_dir):
            os.makedirs(d, exist_ok=True)


def corpus_layout(cfg):
    lay = cfg.layout
    return sw.CorpusLayout(
        source_speakers=lay.source_speakers, source_emotions=lay.source_emotions,
        target_speakers=lay.target_speakers, target_emotions=lay.target_emotions,
        n_source=lay.n_source, source_heldout_ratio=lay.source_heldout_ratio,
        target_train=lay.target_train, target_test=lay.target_test,
        text_len_min=lay.text_len_min, text_len_max=lay.text_len_max,
        target_text_vocab=lay.target_text_vocab, with_transfer=True)


def build_domain(cfg):
    lay = corpus_layout(cfg)
    d = cfg.domain
    return sw.make_domain(
        cfg.seed, v_t=d.v_t, v_s=d.v_s,
        n_speakers=lay.required_speakers(), n_emotions=lay.required_emotions(),
        segment_len=d.segment_len, alpha=d.alpha, beta=d.beta, gamma=d.gamma,
        content_scale=d.content_scale, tau_range=(d.tau_lo, d.tau_hi))


def model_config(cfg):
    m = cfg.model
    return clm.ModelConfig(
        n_layers=m.n_layers, model_dim=m.model_dim, inner_dim=m.inner_dim,
        n_heads=m.n_heads, text_vocab=cfg.domain.v_t,
        speech_vocab=cfg.domain.v_s, max_seq_len=m.max_seq_len,
        dtype=cfg.float_mode)


def _check_hash(found, cfg, what):
    if found != cfg.config_hash():
        raise ConfigMismatchError(
            f"{what} was produced by config {found}, current is {cfg.config_hash()}")


# ------------------------------------------------------------------ stages

def stage_gen_data(cfg, log):
    log.stage("gen-data")
    paths = RunPaths(cfg.out_dir)
    paths.ensure()
    cfg.save(paths.config)
    spec = build_domain(cfg)
    spec.save(paths.domain)
    results = sw.build_corpora(spec, corpus_layout(cfg), paths.corpora_dir)
    with open(paths.corpora_index) as f:
        index = json.load(f)
    index["config_hash"] = cfg.config_hash()
    with open(paths.corpora_index, "w") as f:
        json.dump(index, f, sort_keys=True, indent=1)
    counts = {k: len(v[1]) for k, v in results.items()}
    log.log(f"gen-data: {counts}")
    return spec


def _load_split(cfg, split):
    paths = RunPaths(cfg.out_dir)
    with open(paths.corpora_index) as f:
        index = json.load(f)
    _check_hash(index.get("config_hash"), cfg, "corpora")
    return sw.read_jsonl(index[split]["path"])


def stage_pretrain(cfg, log, resume_from=None):
    log.stage("pretrain")
    paths = RunPaths(cfg.out_dir)
    corpus = _load_split(cfg, "pretrain")
    pt = cfg.pretrain
    start_epoch, opt_state = 0, None
    if resume_from:
        model, meta, opt_state = load_checkpoint(resume_from)
        _check_hash(meta.get("config_hash"), cfg, "resume checkpoint")
        start_epoch = meta["epoch"] + 1
        log.log(f"pretrain: resuming after epoch {meta['epoch']}")
    else:
        model = clm.CodecLM(model_config(cfg), seed=cfg.seed)

    kept = []

    def on_epoch(ep, m, loss, opt):
        if cfg.keep_checkpoints or (ep + 1) % pt.checkpoint_every == 0:
            p = os.path.join(cfg.out_dir, f"pretrain-epoch-{ep}.ckpt")
            save_checkpoint(m, {"config_hash": cfg.config_hash(), "stage": "pretrain",
                                "seed": cfg.seed, "epoch": ep}, p,
                            opt_state=optimizer_state(opt))
            kept.append(p)

    losses = train_lm(model, corpus, epochs=pt.epochs, batch_size=pt.batch_size,
                      peak_lr=pt.peak_lr, seed=cfg.seed,
                      single_epochs=pt.single_epochs,
                      start_epoch=start_epoch, opt_state=opt_state,
                      on_epoch=on_epoch, log=log.log)
    save_checkpoint(model, {"config_hash": cfg.config_hash(), "stage": "pretrain",
                            "seed": cfg.seed, "epoch": pt.epochs - 1,
                            "losses": losses}, paths.pretrained)
    if not cfg.keep_checkpoints:
        for p in kept:
            if os.path.exists(p):
                os.remove(p)
    return paths.pretrained


def _load_pretrained(cfg):
    paths = RunPaths(cfg.out_dir)
    model, meta, _ = load_checkpoint(paths.pretrained)
    _check_hash(meta.get("config_hash"), cfg, "pretrained checkpoint")
    return model


def capture_probe_dataset(cfg, model, utterances, log=None):
    """Frozen-backbone captures, speech frames only, layernormed once."""
    buckets = {}
    for i, u in enumerate(utterances):
        buckets.setdefault(len(u.text), []).append(i)
    speakers = sorted({u.speaker for u in utterances})
    emotions = sorted({u.emotion for u in utterances})
    s_index = {s: i for i, s in enumerate(speakers)}
    e_index = {e: i for i, e in enumerate(emotions)}
    dataset = [None] * len(utterances)
    for t_s in sorted(buckets):
        idxs = buckets[t_s]
        for i0 in range(0, len(idxs), 32):
            chunk = idxs[i0:i0 + 32]
            text = np.asarray([utterances[i].text for i in chunk], dtype=np.int64)
            speech = np.asarray([utterances[i].speech for i in chunk], dtype=np.int64)
            caps, _ = model.forward_batch(text, speech, capture=True)
            stack = np.stack(caps)                       # (N, B, T, D)
            stack = stack[:, :, t_s + 1:, :]             # speech frames only
            for row, i in enumerate(chunk):
                u = utterances[i]
                dataset[i] = (cp.layernormed_stack(np.ascontiguousarray(stack[:, row])),
                              s_index[u.speaker], e_index[u.emotion])
    return dataset, len(speakers), len(emotions)


def stage_probe(cfg, log):
    log.stage("probe")
    paths = RunPaths(cfg.out_dir)
    model = _load_pretrained(cfg)
    corpus = _load_split(cfg, "pretrain")[:cfg.probe.utterances]
    dataset, n_spk, n_emo = capture_probe_dataset(cfg, model, corpus, log)
    pr = cfg.probe
    result = cp.train_probe(
        dataset, cfg.model.n_layers, n_spk, n_emo, seed=cfg.seed,
        epochs=pr.epochs, batch_size=pr.batch_size, peak_lr=pr.peak_lr,
        channels=pr.channels, attn_dim=pr.attn_dim,
        dtype=model.config.np_dtype(), pre_layernormed=True, log=log.log)
    cp.save_layer_weights(result, cfg.config_hash(), paths.weights)
    w_e, w_s = cp.extract_layer_weights(result)
    log.log(f"probe: speaker acc {result.speaker_accuracy:.3f}, "
            f"emotion acc {result.emotion_accuracy:.3f}")
    log.log(f"probe: W_e={np.round(w_e, 4).tolist()}")
    log.log(f"probe: W_s={np.round(w_s, 4).tolist()}")
    return result


def load_weights_file(cfg):
    paths = RunPaths(cfg.out_dir)
    doc = cp.load_layer_weights(paths.weights)
    _check_hash(doc.get("backbone_config_hash"), cfg, "weights file")
    return doc


def all_strategies(cfg):
    seen, out = set(), []
    for s in list(cfg.strategies) + (list(cfg.transfer.strategies) if cfg.transfer.enabled else []):
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def stage_select(cfg, log):
    log.stage("select")
    paths = RunPaths(cfg.out_dir)
    doc = load_weights_file(cfg)
    w_m = fs.mean_weights(doc["w_emotion"], doc["w_speaker"])
    model = clm.CodecLM(model_config(cfg), seed=0)   # counts only
    plans = {}
    for strategy in all_strategies(cfg):
        plan = fs.resolve_plan(model, strategy, w_m=w_m,
                               weights_file=paths.weights,
                               epochs=cfg.finetune.epochs,
                               lr_peak_fraction=cfg.finetune.lr_peak_fraction)
        plan.save(paths.plan(strategy), cfg.config_hash())
        plans[strategy] = plan
    csp = plans.get("csp")
    if csp:
        log.log(f"select: csp layers (1-based) {csp.layers_1based}, "
                f"trainable {csp.trainable} / {csp.total}")
    return plans


def load_plan(cfg, strategy):
    paths = RunPaths(cfg.out_dir)
    with open(paths.plan(strategy)) as f:
        doc = json.load(f)
    _check_hash(doc.get("config_hash"), cfg, f"plan {strategy}")
    return fs.FineTunePlan.from_dict(doc, name=strategy,
                                     epochs=cfg.finetune.epochs,
                                     lr_peak_fraction=cfg.finetune.lr_peak_fraction)


def stage_evaluator(cfg, log):
    log.stage("evaluator")
    paths = RunPaths(cfg.out_dir)
    ev_cfg = cfg.evaluator
    if os.path.exists(paths.evaluator):
        arrays, meta = load_arrays(paths.evaluator)
        if meta.get("config_hash") == cfg.config_hash():
            ev = ek.ReferenceEvaluator(
                cfg.domain.v_s, meta["speakers"], meta["emotions"],
                emb_dim=ev_cfg.emb_dim, channels=ev_cfg.channels,
                attn_dim=ev_cfg.attn_dim, seed=cfg.seed,
                dtype=np.float64 if cfg.float_mode == "float64" else np.float32)
            ev.load_state(arrays.items())
            ev.freeze()
            ev.held_out_accuracy = meta["held_out_accuracy"]
            log.log("evaluator: loaded existing checkpoint")
            return ev
    corpus = (_load_split(cfg, "pretrain")[:ev_cfg.source_utterances]
              + _load_split(cfg, "target-train")
              + _load_split(cfg, "transfer-train"))
    ev = ek.train_reference_evaluator(
        corpus, cfg.domain.v_s, seed=cfg.seed, epochs=ev_cfg.epochs,
        batch_size=ev_cfg.batch_size, peak_lr=ev_cfg.peak_lr,
        emb_dim=ev_cfg.emb_dim, channels=ev_cfg.channels,
        attn_dim=ev_cfg.attn_dim, accuracy_floor=ev_cfg.accuracy_floor,
        dtype=np.float64 if cfg.float_mode == "float64" else np.float32,
        log=log.log)
    save_arrays(paths.evaluator, ev.state_items(),
                {"config_hash": cfg.config_hash(), "speakers": ev.speaker_ids,
                 "emotions": ev.emotion_ids, "held_out_accuracy": ev.held_out_accuracy})
    log.log(f"evaluator: held-out accuracy {ev.held_out_accuracy}")
    return ev


class EvalContext:
    """Everything an evaluation round needs, precomputed once."""

    def __init__(self, cfg, evaluator, transfer=False):
        which = "transfer" if transfer else "target"
        self.spec = sw.DomainSpec.load(RunPaths(cfg.out_dir).domain)
        self.evaluator = evaluator
        self.test = _load_split(cfg, f"{which}-test")
        self.pool = _load_split(cfg, f"{which}-train")
        heldout = _load_split(cfg, "source-heldout")
        self.source_sample = heldout[:cfg.eval.source_ter_utterances]
        self.source_pool = _load_split(cfg, "pretrain")
        self.ref_embeddings = ek.reference_embeddings(evaluator, self.test)
        self.decode = cfg.eval.decode
        self.temperature = cfg.eval.temperature

    def evaluate(self, model, seed):
        row = ek.evaluate_adaptation(
            model, self.test, self.pool, self.evaluator, self.spec,
            source_corpus=self.source_sample, source_prompt_pool=self.source_pool,
            decode=self.decode, temperature=self.temperature, seed=seed,
            ref_embeddings=self.ref_embeddings)
        return row


def _eval_seed(cfg, epoch):
    # same generation noise for every strategy at a given epoch
    return cfg.seed * 1009 + epoch


def stage_eval_origin(cfg, ctx, log, transfer=False):
    log.stage("eval-origin" if not transfer else "transfer-eval-origin")
    paths = RunPaths(cfg.out_dir)
    model = _load_pretrained(cfg)
    row = ctx.evaluate(model, _eval_seed(cfg, 0))
    doc = {"config_hash": cfg.config_hash(), "strategy": "origin", "seed": 0,
           "trainable": 0, "total": clm.count_params(model, "all"),
           "rows": [{"epoch": 0, "ss": row.ss, "ers": row.ers,
                     "ter_target": row.ter_target, "ter_source": row.ter_source}]}
    with open(paths.rows("origin", 0, transfer), "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
    log.log(f"origin: ss={row.ss:.4f} ers={row.ers:.4f} "
            f"ter_t={row.ter_target:.4f} ter_s={row.ter_source:.4f}")
    return doc


def stage_finetune_eval(cfg, ctx, strategy, run_seed, log, transfer=False):
    """One grid cell: fine-tune under the plan, evaluating along the way."""
    tag = f"{'transfer-' if transfer else ''}{strategy}-{run_seed}"
    log.stage(f"finetune-eval:{tag}")
    paths = RunPaths(cfg.out_dir)
    model = _load_pretrained(cfg)
    plan = load_plan(cfg, strategy)
    corpus = _load_split(cfg, "transfer-train" if transfer else "target-train")
    rows = []

    def on_epoch(ep, m, loss, opt):
        final = ep == plan.epochs - 1
        if final or (ep + 1) % cfg.eval.every_epochs == 0:
            row = ctx.evaluate(m, _eval_seed(cfg, ep + 1))
            rows.append({"epoch": ep + 1, "ss": row.ss, "ers": row.ers,
                         "ter_target": row.ter_target, "ter_source": row.ter_source})
            log.log(f"{tag} epoch {ep + 1}: loss={loss:.4f} ss={row.ss:.4f} "
                    f"ers={row.ers:.4f} ter_t={row.ter_target:.4f} "
                    f"ter_s={row.ter_source:.4f}")
        if cfg.keep_checkpoints:
            p = os.path.join(cfg.out_dir, f"ft-{tag}-epoch-{ep}.ckpt")
            save_checkpoint(m, {"config_hash": cfg.config_hash(), "stage": "finetune",
                                "strategy": strategy, "seed": run_seed, "epoch": ep}, p)

    fs.run_finetune(model, plan, corpus, seed=run_seed,
                    peak_lr=cfg.pretrain.peak_lr,
                    batch_size=cfg.finetune.batch_size,
                    pair_prompts=cfg.finetune.pair_prompts, on_epoch=on_epoch)
    doc = {"config_hash": cfg.config_hash(), "strategy": strategy,
           "seed": run_seed, "trainable": plan.trainable, "total": plan.total,
           "rows": rows}
    with open(paths.rows(strategy, run_seed, transfer), "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
    return doc


def stage_finetune_only(cfg, strategy, run_seed, log):
    """Standalone finetune subcommand: persist a checkpoint per epoch."""
    log.stage(f"finetune:{strategy}-{run_seed}")
    model = _load_pretrained(cfg)
    plan = load_plan(cfg, strategy)
    corpus = _load_split(cfg, "target-train")
    ck_dir = os.path.join(cfg.out_dir, "checkpoints", f"{strategy}-{run_seed}")
    os.makedirs(ck_dir, exist_ok=True)

    def on_epoch(ep, m, loss, opt):
        save_checkpoint(m, {"config_hash": cfg.config_hash(), "stage": "finetune",
                            "strategy": strategy, "seed": run_seed, "epoch": ep},
                        os.path.join(ck_dir, f"epoch-{ep:02d}.ckpt"))

    fs.run_finetune(model, plan, corpus, seed=run_seed,
                    peak_lr=cfg.pretrain.peak_lr,
                    batch_size=cfg.finetune.batch_size,
                    pair_prompts=cfg.finetune.pair_prompts, on_epoch=on_epoch,
                    log=log.log)
    return ck_dir


def stage_eval_checkpoints(cfg, ctx, strategy, run_seed, log):
    """Standalone eval subcommand: score every persisted epoch checkpoint."""
    log.stage(f"eval:{strategy}-{run_seed}")
    paths = RunPaths(cfg.out_dir)
    plan = load_plan(cfg, strategy)
    ck_dir = os.path.join(cfg.out_dir, "checkpoints", f"{strategy}-{run_seed}")
    if not os.path.isdir(ck_dir):
        raise ConfigMismatchError(f"no checkpoints for {strategy}-{run_seed}; "
                                  "run finetune first")
    rows = []
    for name in sorted(os.listdir(ck_dir)):
        if not name.endswith(".ckpt"):
            continue
        model, meta, _ = load_checkpoint(os.path.join(ck_dir, name))
        _check_hash(meta.get("config_hash"), cfg, f"checkpoint {name}")
        ep = meta["epoch"]
        final = ep == plan.epochs - 1
        if not final and (ep + 1) % cfg.eval.every_epochs:
            continue
        row = ctx.evaluate(model, _eval_seed(cfg, ep + 1))
        rows.append({"epoch": ep + 1, "ss": row.ss, "ers": row.ers,
                     "ter_target": row.ter_target, "ter_source": row.ter_source})
        log.log(f"eval {strategy}-{run_seed} epoch {ep + 1}: ss={row.ss:.4f} "
                f"ers={row.ers:.4f} ter_t={row.ter_target:.4f}")
    doc = {"config_hash": cfg.config_hash(), "strategy": strategy,
           "seed": run_seed, "trainable": plan.trainable, "total": plan.total,
           "rows": rows}
    with open(paths.rows(strategy, run_seed), "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
    return doc


def stage_bench(cfg, log):
    log.stage("bench")
    paths = RunPaths(cfg.out_dir)
    corpus = _load_split(cfg, "target-train")
    results = {}
    for strategy in cfg.bench.plans:
        model = _load_pretrained(cfg)
        plan = load_plan(cfg, strategy)
        r = ek.bench_steps(model, plan, corpus, n_steps=cfg.bench.n_steps,
                           warmup=cfg.bench.warmup,
                           batch_size=cfg.bench.batch_size, seed=cfg.seed,
                           pair_prompts=cfg.finetune.pair_prompts)
        results[strategy] = r
        log.log(f"bench {strategy}: {r['seconds']:.2f}s "
                f"({r['steps_per_sec']:.2f} steps/s)")
    if "full" in results:
        base = results["full"]["seconds"]
        for s, r in results.items():
            r["speedup_vs_full"] = base / r["seconds"]
    with open(paths.timing, "w") as f:
        json.dump({"config_hash": cfg.config_hash(), "n_steps": cfg.bench.n_steps,
                   "results": results}, f, sort_keys=True, indent=1)
    return results


def run_all(cfg, log=None, include_transfer=None):
    """The full experiment grid; returns the report summary dict."""
    paths = RunPaths(cfg.out_dir)
    paths.ensure()
    log = log or StageLog(cfg.out_dir)
    stage_gen_data(cfg, log)
    stage_pretrain(cfg, log)
    stage_probe(cfg, log)
    stage_select(cfg, log)
    evaluator = stage_evaluator(cfg, log)
    ctx = EvalContext(cfg, evaluator)
    stage_eval_origin(cfg, ctx, log)
    for strategy in cfg.strategies:
        if strategy == "origin":
            continue
        for run_seed in cfg.seeds:
            stage_finetune_eval(cfg, ctx, strategy, run_seed, log)
    stage_bench(cfg, log)
    from .report import write_reports
    summary = write_reports(cfg, log)
    do_transfer = cfg.transfer.enabled if include_transfer is None else include_transfer
    if do_transfer:
        transfer_experiment(cfg, log, evaluator=evaluator)
    return summary


def transfer_experiment(cfg, log=None, evaluator=None):
    """Fine-tune on the second disjoint target domain reusing domain-1's
    selection; probing must not run here."""
    paths = RunPaths(cfg.out_dir)
    log = log or StageLog(cfg.out_dir)
    log.stage("transfer")
    if not os.path.exists(paths.weights):
        raise ConfigMismatchError("transfer requires the domain-1 weights file")
    load_weights_file(cfg)   # hash check; selection itself comes from plan files
    if evaluator is None:
        evaluator = stage_evaluator(cfg, log)
    os.makedirs(os.path.join(cfg.out_dir, "transfer-plans"), exist_ok=True)
    for strategy in cfg.transfer.strategies:
        src = paths.plan(strategy)
        shutil.copyfile(src, os.path.join(cfg.out_dir, "transfer-plans",
                                          f"{strategy}.json"))
    ctx = EvalContext(cfg, evaluator, transfer=True)
    stage_eval_origin(cfg, ctx, log, transfer=True)
    for strategy in cfg.transfer.strategies:
        for run_seed in cfg.seeds:
            stage_finetune_eval(cfg, ctx, strategy, run_seed, log, transfer=True)
    from .report import write_transfer_report
    return write_transfer_report(cfg, log)
