/**
 * Checkpoint container for the mini speech-to-text toolkit.
 *
 * A checkpoint is a JSON document holding the vocabulary (sentencepiece-style
 * surfaces with the U+2581 begin-of-word marker) and all model weights. The
 * layout is deliberately plain so checkpoints are portable and diffable.
 */

import * as fs from "fs";

export const BOW_MARKER = "▁";
export const CHECKPOINT_FORMAT = "mini-s2t-checkpoint";

export interface VocabTable {
  surfaces: string[];
  eosId: number;
  unkId: number;
}

export interface CheckpointWeights {
  /** hidden x nBins encoder input projection */
  encIn: number[][];
  encBias: number[];
  /** vocab x embed token embeddings */
  emb: number[][];
  /** hidden x embed attention query projection */
  attnQuery: number[][];
  /** hidden x embed decoder state from previous token */
  stateFromEmb: number[][];
  /** hidden x hidden decoder state from attention context */
  stateFromCtx: number[][];
  /** vocab x hidden output projection */
  out: number[][];
  outBias: number[];
}

export interface Checkpoint {
  format: string;
  version: number;
  nBins: number;
  /** encoder downsampling factor (frames per pooled step) */
  pool: number;
  hidden: number;
  embed: number;
  vocab: VocabTable;
  weights: CheckpointWeights;
}

export class CheckpointError extends Error {}

function expectMatrix(name: string, m: unknown, rows: number, cols: number): number[][] {
  if (!Array.isArray(m) || m.length !== rows) {
    throw new CheckpointError(`${name}: expected ${rows} rows`);
  }
  for (const row of m) {
    if (!Array.isArray(row) || row.length !== cols) {
      throw new CheckpointError(`${name}: expected ${cols} columns per row`);
    }
    for (const v of row) {
      if (typeof v !== "number" || !Number.isFinite(v)) {
        throw new CheckpointError(`${name}: non-finite weight`);
      }
    }
  }
  return m as number[][];
}

export function validateCheckpoint(obj: unknown): Checkpoint {
  const ckpt = obj as Checkpoint;
  if (!ckpt || typeof ckpt !== "object" || ckpt.format !== CHECKPOINT_FORMAT) {
    throw new CheckpointError("not a mini-s2t checkpoint");
  }
  if (ckpt.version !== 1) {
    throw new CheckpointError(`unsupported checkpoint version ${ckpt.version}`);
  }
  const { nBins, pool, hidden, embed, vocab, weights } = ckpt;
  for (const [name, value] of Object.entries({ nBins, pool, hidden, embed })) {
    if (!Number.isInteger(value) || (value as number) < 1) {
      throw new CheckpointError(`${name} must be a positive integer`);
    }
  }
  if (!Array.isArray(vocab.surfaces) || vocab.surfaces.length < 4) {
    throw new CheckpointError("vocabulary too small");
  }
  const V = vocab.surfaces.length;
  for (const id of [vocab.eosId, vocab.unkId]) {
    if (!Number.isInteger(id) || id < 0 || id >= V) {
      throw new CheckpointError("eos/unk id outside the vocabulary");
    }
  }
  expectMatrix("encIn", weights.encIn, hidden, nBins);
  expectMatrix("emb", weights.emb, V, embed);
  expectMatrix("attnQuery", weights.attnQuery, hidden, embed);
  expectMatrix("stateFromEmb", weights.stateFromEmb, hidden, embed);
  expectMatrix("stateFromCtx", weights.stateFromCtx, hidden, hidden);
  expectMatrix("out", weights.out, V, hidden);
  if (!Array.isArray(weights.encBias) || weights.encBias.length !== hidden
      || !Array.isArray(weights.outBias) || weights.outBias.length !== V) {
    throw new CheckpointError("bias vector has wrong length");
  }
  return ckpt;
}

export function loadCheckpoint(path: string): Checkpoint {
  let raw: string;
  try {
    raw = fs.readFileSync(path, "utf-8");
  } catch (err) {
    throw new CheckpointError(`cannot read checkpoint ${path}: ${err}`);
  }
  let obj: unknown;
  try {
    obj = JSON.parse(raw);
  } catch (err) {
    throw new CheckpointError(`checkpoint is not valid JSON: ${err}`);
  }
  return validateCheckpoint(obj);
}

/**
 * Deterministic demo checkpoint built from a seeded generator, so the repo
 * can ship a fixed "public checkpoint" without binary artifacts.
 */
export function buildDemoCheckpoint(seed = 1234): Checkpoint {
  const surfaces = [
    `${BOW_MARKER}sono`, `${BOW_MARKER}molto`, `${BOW_MARKER}cur`, "ios", "iss",
    "im", "a", "o", `${BOW_MARKER}oggi`, ".", `${BOW_MARKER}<unk>`, "</s>",
    `${BOW_MARKER}la`, `${BOW_MARKER}studente`, "ssa", `${BOW_MARKER}bella`,
    `${BOW_MARKER}bello`, `${BOW_MARKER}mare`, `${BOW_MARKER}sole`,
    `${BOW_MARKER}tempo`, `${BOW_MARKER}qui`, `${BOW_MARKER}davvero`, ",", "?",
  ];
  const nBins = 20;
  const hidden = 12;
  const embed = 8;
  const V = surfaces.length;

  // mulberry32: tiny deterministic PRNG, good enough for weight init
  let state = seed >>> 0;
  const next = () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
  const matrix = (rows: number, cols: number, scale: number): number[][] =>
    Array.from({ length: rows }, () =>
      Array.from({ length: cols }, () => (next() - 0.5) * 2 * scale));
  const vector = (n: number, scale: number): number[] =>
    Array.from({ length: n }, () => (next() - 0.5) * 2 * scale);

  return {
    format: CHECKPOINT_FORMAT,
    version: 1,
    nBins,
    pool: 4,
    hidden,
    embed,
    vocab: { surfaces, eosId: surfaces.indexOf("</s>"), unkId: surfaces.indexOf(`${BOW_MARKER}<unk>`) },
    weights: {
      encIn: matrix(hidden, nBins, 1 / Math.sqrt(nBins)),
      encBias: vector(hidden, 0.1),
      emb: matrix(V, embed, 0.5),
      attnQuery: matrix(hidden, embed, 1 / Math.sqrt(embed)),
      stateFromEmb: matrix(hidden, embed, 1 / Math.sqrt(embed)),
      stateFromCtx: matrix(hidden, hidden, 1 / Math.sqrt(hidden)),
      out: matrix(V, hidden, 1 / Math.sqrt(hidden)),
      outBias: vector(V, 0.1),
    },
  };
}
