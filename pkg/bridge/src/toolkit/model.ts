/**
 * Mini speech-to-text model: utterance CMVN, pooled tanh encoder, and an
 * attention decoder producing a full softmax distribution per step. Small
 * enough to run anywhere, real enough to expose teacher-forced scoring and
 * beam decoding like any sequence-to-sequence toolkit.
 */

import { beamSearch, BeamOptions } from "./beam";
import { BOW_MARKER, Checkpoint } from "./checkpoint";

export class ModelError extends Error {}

function matVec(m: number[][], v: ArrayLike<number>): Float64Array {
  const out = new Float64Array(m.length);
  for (let r = 0; r < m.length; r++) {
    const row = m[r];
    let acc = 0;
    for (let c = 0; c < row.length; c++) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

function tanhInPlace(v: Float64Array): Float64Array {
  for (let i = 0; i < v.length; i++) v[i] = Math.tanh(v[i]);
  return v;
}

function softmax(logits: Float64Array): Float64Array {
  let max = -Infinity;
  for (const x of logits) if (x > max) max = x;
  const out = new Float64Array(logits.length);
  let total = 0;
  for (let i = 0; i < logits.length; i++) {
    const e = Math.exp(logits[i] - max);
    out[i] = e;
    total += e;
  }
  for (let i = 0; i < out.length; i++) out[i] /= total;
  return out;
}

function positionVector(position: number, dim: number): Float64Array {
  const out = new Float64Array(dim);
  for (let k = 0; k < dim; k++) {
    const angle = position / Math.pow(10000, Math.floor(k / 2) * 2 / dim);
    out[k] = k % 2 === 0 ? Math.sin(angle) : Math.cos(angle);
  }
  return out;
}

/** Encoder states for one (possibly masked) utterance. */
export type EncoderStates = Float64Array[];

export interface ScoreResult {
  tokenProbs: number[];
  /** requested step index -> word-boundary probability mass */
  boundaryMass: Map<number, number>;
}

export class MiniS2TModel {
  readonly vocabSize: number;
  readonly bowIds: Set<number>;
  readonly punctuationIds: Set<number>;
  readonly boundaryIds: Set<number>;

  constructor(private readonly ckpt: Checkpoint) {
    this.vocabSize = ckpt.vocab.surfaces.length;
    this.bowIds = new Set();
    this.punctuationIds = new Set();
    ckpt.vocab.surfaces.forEach((surface, id) => {
      if (surface.startsWith(BOW_MARKER)) this.bowIds.add(id);
      else if (/^[\p{P}]+$/u.test(surface)) this.punctuationIds.add(id);
    });
    this.boundaryIds = new Set([...this.bowIds, ...this.punctuationIds, ckpt.vocab.eosId]);
  }

  get eosId(): number {
    return this.ckpt.vocab.eosId;
  }

  get unkId(): number {
    return this.ckpt.vocab.unkId;
  }

  get nBins(): number {
    return this.ckpt.nBins;
  }

  surface(tokenId: number): string {
    return this.ckpt.vocab.surfaces[tokenId] ?? "";
  }

  /**
   * Encode raw (already masked) features: utterance-level CMVN per bin,
   * mean-pool every `pool` frames, then the tanh input projection.
   */
  encode(frames: number, data: Float32Array): EncoderStates {
    const bins = this.ckpt.nBins;
    if (frames * bins !== data.length) {
      throw new ModelError(`feature length ${data.length} is not ${frames}x${bins}`);
    }
    const mean = new Float64Array(bins);
    const variance = new Float64Array(bins);
    for (let t = 0; t < frames; t++) {
      for (let b = 0; b < bins; b++) mean[b] += data[t * bins + b];
    }
    for (let b = 0; b < bins; b++) mean[b] /= frames;
    for (let t = 0; t < frames; t++) {
      for (let b = 0; b < bins; b++) {
        const d = data[t * bins + b] - mean[b];
        variance[b] += d * d;
      }
    }
    for (let b = 0; b < bins; b++) variance[b] = Math.sqrt(variance[b] / frames) + 1e-5;

    const pool = this.ckpt.pool;
    const pooled = Math.ceil(frames / pool);
    const states: EncoderStates = [];
    const frame = new Float64Array(bins);
    for (let p = 0; p < pooled; p++) {
      frame.fill(0);
      const start = p * pool;
      const end = Math.min(start + pool, frames);
      for (let t = start; t < end; t++) {
        for (let b = 0; b < bins; b++) {
          frame[b] += (data[t * bins + b] - mean[b]) / variance[b];
        }
      }
      for (let b = 0; b < bins; b++) frame[b] /= end - start;
      const h = matVec(this.ckpt.weights.encIn, frame);
      for (let i = 0; i < h.length; i++) h[i] += this.ckpt.weights.encBias[i];
      states.push(tanhInPlace(h));
    }
    return states;
  }

  /** Full softmax distribution at one decoding position. */
  stepDistribution(states: EncoderStates, prevToken: number, position: number): Float64Array {
    const w = this.ckpt.weights;
    const emb = w.emb[prevToken];
    if (!emb) throw new ModelError(`token ${prevToken} outside the vocabulary`);
    const hidden = this.ckpt.hidden;
    const pos = positionVector(position, hidden);

    const query = matVec(w.attnQuery, emb);
    for (let i = 0; i < hidden; i++) query[i] += pos[i];
    tanhInPlace(query);

    const scores = new Float64Array(states.length);
    for (let t = 0; t < states.length; t++) {
      let acc = 0;
      const h = states[t];
      for (let i = 0; i < hidden; i++) acc += h[i] * query[i];
      scores[t] = acc;
    }
    const alpha = softmax(scores);
    const context = new Float64Array(hidden);
    for (let t = 0; t < states.length; t++) {
      const h = states[t];
      for (let i = 0; i < hidden; i++) context[i] += alpha[t] * h[i];
    }

    const state = matVec(w.stateFromEmb, emb);
    const fromCtx = matVec(w.stateFromCtx, context);
    for (let i = 0; i < hidden; i++) state[i] += fromCtx[i] + pos[i];
    tanhInPlace(state);

    const logits = matVec(w.out, state);
    for (let v = 0; v < logits.length; v++) logits[v] += w.outBias[v];
    return softmax(logits);
  }

  /**
   * Teacher-forced scoring: probability of each continuation token given the
   * prefix, plus the word-boundary mass (begin-of-word + punctuation + EOS)
   * at the requested steps relative to the continuation start. A step index
   * equal to the continuation length means the position after its last token.
   */
  scoreTeacherForced(states: EncoderStates, prefix: number[], continuation: number[],
                     wantBoundaryAt: number[]): ScoreResult {
    for (const token of [...prefix, ...continuation]) {
      if (!Number.isInteger(token) || token < 0 || token >= this.vocabSize) {
        throw new ModelError(`token ${token} outside the vocabulary`);
      }
    }
    const wanted = new Set(wantBoundaryAt);
    const tokenProbs: number[] = [];
    const boundaryMass = new Map<number, number>();
    const sequence = [...prefix, ...continuation];
    for (let i = 0; i <= continuation.length; i++) {
      const absolute = prefix.length + i;
      const needProb = i < continuation.length;
      const needMass = wanted.has(i);
      if (!needProb && !needMass) continue;
      const prev = absolute === 0 ? this.eosId : sequence[absolute - 1];
      const dist = this.stepDistribution(states, prev, absolute);
      if (needProb) tokenProbs.push(dist[continuation[i]]);
      if (needMass) {
        let mass = 0;
        for (const id of this.boundaryIds) mass += dist[id];
        boundaryMass.set(i, mass);
      }
    }
    return { tokenProbs, boundaryMass };
  }

  /** Native beam decode: the toolkit's own generation entry point. */
  decode(states: EncoderStates, opts: Omit<BeamOptions, "eosId">): number[] {
    return beamSearch(
      (prefixTokens, position) => {
        const prev = position === 0 ? this.eosId : prefixTokens[prefixTokens.length - 1];
        return this.stepDistribution(states, prev, position);
      },
      { ...opts, eosId: this.eosId }
    );
  }

  detokenize(tokens: number[]): string {
    let text = "";
    for (const token of tokens) {
      if (token === this.eosId) continue;
      text += this.surface(token);
    }
    return text.split(BOW_MARKER).join(" ").trim();
  }

  /** Greedy longest-match tokenization over the vocabulary surfaces. */
  tokenize(text: string): number[] {
    const bySurface = new Map<string, number>();
    this.ckpt.vocab.surfaces.forEach((surface, id) => {
      if (surface && !bySurface.has(surface)) bySurface.set(surface, id);
    });
    let maxLen = 0;
    for (const s of bySurface.keys()) maxLen = Math.max(maxLen, s.length);
    const marked = BOW_MARKER + text.trim().split(/\s+/).join(BOW_MARKER);
    const tokens: number[] = [];
    let pos = 0;
    while (pos < marked.length) {
      let match: string | null = null;
      for (let len = Math.min(maxLen, marked.length - pos); len > 0; len--) {
        const piece = marked.slice(pos, pos + len);
        if (bySurface.has(piece)) {
          match = piece;
          break;
        }
      }
      if (match === null) {
        // no piece covers this character: emit unk and skip to the next word
        tokens.push(this.unkId);
        const nextBow = marked.indexOf(BOW_MARKER, pos + 1);
        pos = nextBow === -1 ? marked.length : nextBow;
        continue;
      }
      tokens.push(bySurface.get(match)!);
      pos += match.length;
    }
    return tokens;
  }
}
