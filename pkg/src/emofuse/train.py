"""Two-stage training loop.

Stage 1 fits the encoders and cross-modal networks with the combined
contrastive + focal objective, resampling a stop-gradient negative pool
every epoch. Stage 2 freezes into fine-tuning: interpolation
coefficients update from validation gradients on informative samples,
while the context classifier trains with the focal loss and stage-1
parameters move at a reduced rate. Every epoch ends with a checkpoint
and one JSON log record, and the whole loop is resumable bit-for-bit.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .context import classify_dialogue
from .data import all_utterances
from .encoders import MODES
from .errors import ContractError, DataError, NumericError
from .fusion import (adaptive_fuse, estimate_alpha_pair,
                     select_informative_samples, update_alphas)
from .losses import (ace_loss, averaged_focal, combined_loss, focal_loss,
                     sample_negative_ids)
from .model import (LoadedCheckpoint, Pipeline, evaluate, fuse_dialogue,
                    init_pipeline, named_parameters, pairwise_coefficients,
                    save_checkpoint, stage1_parameters, utterance_descriptors)
from .rng import Rng

_TRAIN_STREAM = 7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First and second moment accumulators, keyed like named_parameters."""
    steps: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"steps": dict(self.steps),
                "m": {k: a.tolist() for k, a in self.m.items()},
                "v": {k: a.tolist() for k, a in self.v.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(steps={k: int(v) for k, v in d["steps"].items()},
                   m={k: np.asarray(a, dtype=np.float64) for k, a in d["m"].items()},
                   v={k: np.asarray(a, dtype=np.float64) for k, a in d["v"].items()})


def adam_step(params: dict, state: AdamState, lr: float, scale: dict = None) -> None:
    """Apply one update to every parameter holding a gradient, then clear it."""
    for name in sorted(params):
        p = params[name]
        g = p.grad
        if g is None:
            continue
        t = state.steps.get(name, 0) + 1
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        state.steps[name] = t
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - ADAM_BETA1 ** t)
        vhat = v / (1.0 - ADAM_BETA2 ** t)
        s = 1.0 if scale is None else scale.get(name, 1.0)
        p.values = p.values - lr * s * mhat / (np.sqrt(vhat) + ADAM_EPS)
        p.grad = None


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def _wrap_numeric(stage: int, batch_index: int, batch):
    names = [d.dialogue_id for d in batch]
    return NumericError(
        f"non-finite value while training stage {stage} batch {batch_index} "
        f"(dialogues {names})")


# ---------------------------------------------------------------------------
# stage 1

def _negative_cache(pipeline: Pipeline, pool, k: int, rng: Rng):
    """Frozen descriptor arrays for every pool utterance plus sampled ids."""
    cache = {}
    for utt in pool:
        descs = utterance_descriptors(pipeline, utt)
        cache[utt.utterance_id] = {m: descs[m].f_ca.values.copy() for m in MODES}
    ids = [u.utterance_id for u in pool]
    neg_ids = {uid: sample_negative_ids(ids, i, k, rng)
               for i, uid in enumerate(ids)}
    return cache, neg_ids


def _stage1_epoch(pipeline: Pipeline, adam: AdamState, rng: Rng,
                  train_dlgs, pool, config: RunConfig) -> dict:
    try:
        cache, neg_ids = _negative_cache(pipeline, pool,
                                         config.negatives_per_anchor, rng)
    except ContractError as e:
        if "finite" in str(e):
            raise NumericError(f"non-finite value while building the stage 1 "
                               f"negative cache: {e}") from None
        raise
    order = list(train_dlgs)
    rng.shuffle(order)
    sums = {"l_ace": 0.0, "l_fl": 0.0, "total": 0.0}
    batches = 0
    for bi, batch in enumerate(_chunks(order, config.batch_size)):
        tape = T.Tape()
        try:
            with T.recording(tape):
                desc_map = {}
                neg_map = {}
                per_mode = {m: [] for m in MODES}
                for d in batch:
                    for utt in d.utterances:
                        descs = utterance_descriptors(pipeline, utt)
                        uid = utt.utterance_id
                        desc_map[uid] = {m: descs[m].f_ca for m in MODES}
                        neg_map[uid] = [
                            {m: T.Tensor(cache[nid][m]) for m in MODES}
                            for nid in neg_ids[uid]]
                        for m in MODES:
                            per_mode[m].append((descs[m].probs, utt.label))
                l_ace = ace_loss(desc_map, neg_map, len(pool), config.tau,
                                 config.nce_form)
                l_fl = averaged_focal(per_mode, config.gamma, config.focal_form)
                report = combined_loss(l_ace, l_fl)
            if not math.isfinite(report.total.item()):
                raise _wrap_numeric(1, bi, batch)
            T.backward(report.total, tape)
        except ContractError as e:
            if "finite" in str(e):
                raise _wrap_numeric(1, bi, batch) from None
            raise
        adam_step(stage1_parameters(pipeline), adam, config.lr)
        T.zero_grad(named_parameters(pipeline).values())
        sums["l_ace"] += report.l_ace.item()
        sums["l_fl"] += report.l_fl.item()
        sums["total"] += report.total.item()
        batches += 1
    return {k: v / batches for k, v in sums.items()}


def per_mode_accuracy(pipeline: Pipeline, dialogues) -> dict:
    """Accuracy of each mode's own classification head, pre-fusion."""
    correct = {m: 0 for m in MODES}
    n = 0
    for d in dialogues:
        for utt in d.utterances:
            descs = utterance_descriptors(pipeline, utt)
            n += 1
            for m in MODES:
                if int(np.argmax(descs[m].probs.values[0])) == utt.label:
                    correct[m] += 1
    if n == 0:
        return {m: 0.0 for m in MODES}
    return {m: correct[m] / n for m in MODES}


# ---------------------------------------------------------------------------
# stage 2

def _alpha_estimates(pipeline: Pipeline, val_dlgs, config: RunConfig):
    """Per-validation-utterance coefficient estimates from loss gradients.

    Returns (estimates: uid -> (a1, a2), frozen per-dialogue descriptor
    cache for cheap re-prediction under candidate coefficients).
    """
    estimates = {}
    cache = {}
    eps = pipeline.alphas.epsilon
    cur_a1 = pipeline.alphas.alpha_prime_1
    for d in val_dlgs:
        tape = T.Tape()
        with T.recording(tape):
            fused, descs = fuse_dialogue(pipeline, d)
            preds = classify_dialogue(
                fused, [u.speaker_id for u in d.utterances],
                [u.utterance_id for u in d.utterances],
                pipeline.context, config.eval_mode)
            terms = [focal_loss(T.reshape(T.pick(pr.probs, 0, utt.label), (1, 1)),
                                config.gamma, config.focal_form)
                     for utt, pr in zip(d.utterances, preds)]
            acc = terms[0]
            for t2 in terms[1:]:
                acc = T.add(acc, t2)
            loss = T.scale(acc, 1.0 / len(terms))
        T.backward(loss, tape)
        for utt, dd in zip(d.utterances, descs):
            ft = dd["text"].f_ca
            fv = dd["video"].f_ca
            fa = dd["audio"].f_ca
            gv = fv.grad if fv.grad is not None else np.zeros_like(fv.values)
            ga = fa.grad if fa.grad is not None else np.zeros_like(fa.values)
            a1 = estimate_alpha_pair(ft.values, fv.values, gv, eps)
            # the second scalar weighs the text/video mixture against audio
            mix = cur_a1 * ft.values + (1.0 - cur_a1) * fv.values
            a2 = estimate_alpha_pair(mix, fa.values, ga, eps)
            estimates[utt.utterance_id] = (a1, a2)
            cache[utt.utterance_id] = (d, {m: dd[m].f_ca.values.copy()
                                           for m in MODES})
        T.zero_grad(named_parameters(pipeline).values())
    return estimates, cache


def _reclassify(pipeline: Pipeline, dialogue, frozen, alphas, config, uid):
    """Predict one utterance from frozen descriptors under given coefficients."""
    pairwise = alphas.pairwise(MODES)
    fused = []
    for utt in dialogue.utterances:
        descs = {m: T.Tensor(frozen[utt.utterance_id][m]) for m in MODES}
        fused.append(adaptive_fuse(descs, pairwise, MODES))
    preds = classify_dialogue(fused, [u.speaker_id for u in dialogue.utterances],
                              [u.utterance_id for u in dialogue.utterances],
                              pipeline.context, config.eval_mode)
    for utt, pr in zip(dialogue.utterances, preds):
        if utt.utterance_id == uid:
            return pr.label
    raise ContractError(f"utterance {uid} not present in its own dialogue")


def _update_alphas_from_val(pipeline: Pipeline, val_dlgs, config: RunConfig) -> dict:
    estimates, cache = _alpha_estimates(pipeline, val_dlgs, config)
    frozen = {uid: arrs for uid, (_, arrs) in cache.items()}

    def predict(uid, alpha_state):
        dialogue = cache[uid][0]
        return _reclassify(pipeline, dialogue, frozen, alpha_state, config, uid)

    chosen = select_informative_samples(
        list(estimates), predict, lambda uid: estimates[uid],
        pipeline.alphas, config.informative_budget)
    if chosen:
        pipeline.alphas = update_alphas(pipeline.alphas,
                                        [estimates[uid] for uid in chosen])
    return {"informative_samples": len(chosen),
            "alpha_prime_1": pipeline.alphas.alpha_prime_1,
            "alpha_prime_2": pipeline.alphas.alpha_prime_2}


def _stage2_epoch(pipeline: Pipeline, adam: AdamState, rng: Rng,
                  train_dlgs, val_dlgs, config: RunConfig) -> dict:
    rec = {}
    if config.alpha_mode == "learned" and val_dlgs:
        rec.update(_update_alphas_from_val(pipeline, val_dlgs, config))
    pairwise = pairwise_coefficients(pipeline)
    order = list(train_dlgs)
    rng.shuffle(order)
    total = 0.0
    batches = 0
    params = named_parameters(pipeline)
    scale = {name: (1.0 if name.startswith("ctx.") else config.fine_tune_scale)
             for name in params}
    for bi, batch in enumerate(_chunks(order, config.batch_size)):
        tape = T.Tape()
        try:
            with T.recording(tape):
                terms = []
                for d in batch:
                    fused, _ = fuse_dialogue(pipeline, d, pairwise)
                    preds = classify_dialogue(
                        fused, [u.speaker_id for u in d.utterances],
                        [u.utterance_id for u in d.utterances],
                        pipeline.context, config.eval_mode)
                    for utt, pr in zip(d.utterances, preds):
                        p_true = T.reshape(T.pick(pr.probs, 0, utt.label), (1, 1))
                        terms.append(focal_loss(p_true, config.gamma,
                                                config.focal_form))
                acc = terms[0]
                for t2 in terms[1:]:
                    acc = T.add(acc, t2)
                loss = T.scale(acc, 1.0 / len(terms))
            if not math.isfinite(loss.item()):
                raise _wrap_numeric(2, bi, batch)
            T.backward(loss, tape)
        except ContractError as e:
            if "finite" in str(e):
                raise _wrap_numeric(2, bi, batch) from None
            raise
        adam_step(params, adam, config.lr, scale)
        T.zero_grad(params.values())
        total += loss.item()
        batches += 1
    rec["focal"] = total / batches
    return rec


# ---------------------------------------------------------------------------
# orchestration

@dataclass
class TrainResult:
    pipeline: Pipeline
    logs: list
    checkpoint_path: str = None


def run_training(config: RunConfig, train_dlgs, val_dlgs, out_dir=None,
                 resume: LoadedCheckpoint = None, emit=None,
                 stop_after: int = None) -> TrainResult:
    """Run (or continue) both stages; checkpoint and log once per epoch.

    ``stop_after`` bounds the number of epochs executed in this call,
    simulating interruption; the saved checkpoint resumes exactly.
    """
    if not train_dlgs:
        raise DataError("training requires at least one dialogue")
    if resume is not None:
        pipeline = resume.pipeline
        adam = AdamState.from_dict(resume.adam) if resume.adam else AdamState()
        rng = Rng(config.seed).spawn(_TRAIN_STREAM)
        if resume.trainer_rng:
            rng.set_state(resume.trainer_rng)
        stage, epoch = resume.stage, resume.epoch
    else:
        pipeline = init_pipeline(config)
        adam = AdamState()
        rng = Rng(config.seed).spawn(_TRAIN_STREAM)
        stage, epoch = 1, 0

    logs = []
    ckpt_path = os.path.join(out_dir, "checkpoint.json") if out_dir else None
    log_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if resume is not None else "w"
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"), mode,
                      encoding="utf-8")

    def _emit(rec):
        logs.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            log_fh.flush()
        if emit:
            emit(rec)

    def _save():
        if ckpt_path:
            save_checkpoint(ckpt_path, pipeline, stage, epoch,
                            adam.to_dict(), rng.get_state())

    pool = all_utterances(train_dlgs)
    ran = 0
    try:
        while stage == 1 and epoch < config.stage1_epochs and \
                (stop_after is None or ran < stop_after):
            rec = _stage1_epoch(pipeline, adam, rng, train_dlgs, pool, config)
            epoch += 1
            ran += 1
            rec.update({"stage": 1, "epoch": epoch})
            rec["val_mode_accuracy"] = per_mode_accuracy(
                pipeline, val_dlgs if val_dlgs else train_dlgs)
            _emit(rec)
            _save()
        if stage == 1 and epoch >= config.stage1_epochs:
            stage, epoch = 2, 0
        while stage == 2 and epoch < config.stage2_epochs and \
                (stop_after is None or ran < stop_after):
            rec = _stage2_epoch(pipeline, adam, rng, train_dlgs, val_dlgs, config)
            epoch += 1
            ran += 1
            rec.update({"stage": 2, "epoch": epoch})
            report = evaluate(pipeline, val_dlgs if val_dlgs else train_dlgs)
            rec["val_accuracy"] = report["accuracy"]
            rec["val_weighted_f1"] = report["weighted_f1"]
            _emit(rec)
            _save()
        _save()
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(pipeline=pipeline, logs=logs, checkpoint_path=ckpt_path)
