/**
 * Protocol adapter: maps wire messages onto the mini toolkit.
 *
 * Masks zero raw filterbank cells before the model's utterance-level
 * normalization, so a zeroed cell means "energy removed", not "statistically
 * neutral value". Every protocol violation is answered with a structured
 * error object; the loop never dies on bad input.
 */

import { decodeFbnkBase64, FbnkError, FeatureMatrix } from "./fbnk";
import { applyCellMask, parseRlePairs, RleError, rleToCells, RlePairs } from "./rle";
import { CheckpointError } from "./toolkit/checkpoint";
import { EncoderStates, MiniS2TModel, ModelError } from "./toolkit/model";

export const PROTOCOL_VERSION = 1;

export interface BridgeConfig {
  beamSize: number;
  noRepeatNgram: number;
  maxLen: number;
  maxSourcePositions: number;
  batchSize: number;
  /** optional token id the bridge prepends to every prefix (e.g. a target
   * language tag the underlying model expects); the engine never sees it */
  prependToken: number | null;
}

export const DEFAULT_CONFIG: BridgeConfig = {
  beamSize: 5,
  noRepeatNgram: 5,
  maxLen: 64,
  maxSourcePositions: 7000,
  batchSize: 16,
  prependToken: null,
};

class ProtocolError extends Error {
  constructor(public code: string, message: string) {
    super(message);
  }
}

type Json = Record<string, unknown>;

function requireString(obj: Json, key: string): string {
  const value = obj[key];
  if (typeof value !== "string") {
    throw new ProtocolError("malformed_message", `field ${key} must be a string`);
  }
  return value;
}

function requireIntList(value: unknown, name: string): number[] {
  if (!Array.isArray(value) || value.some((v) => !Number.isInteger(v))) {
    throw new ProtocolError("malformed_message", `${name} must be a list of integers`);
  }
  return value as number[];
}

function optionalInt(obj: Json, key: string, fallback: number): number {
  const value = obj[key];
  if (value === undefined || value === null) return fallback;
  if (!Number.isInteger(value)) {
    throw new ProtocolError("malformed_message", `field ${key} must be an integer`);
  }
  return value as number;
}

interface StoredFeatures {
  matrix: FeatureMatrix;
  fingerprint: string;
}

export class Bridge {
  private features = new Map<string, StoredFeatures>();

  constructor(private readonly model: MiniS2TModel,
              private readonly config: BridgeConfig = DEFAULT_CONFIG) {}

  /** One JSON line in, one JSON line out (without trailing newline). */
  handleLine(line: string): string {
    let id = -1;
    let kind = "error";
    let payload: Json;
    try {
      let message: unknown;
      try {
        message = JSON.parse(line);
      } catch (err) {
        throw new ProtocolError("malformed_message", `malformed JSON message: ${err}`);
      }
      if (typeof message !== "object" || message === null || Array.isArray(message)) {
        throw new ProtocolError("malformed_message", "protocol message must be a JSON object");
      }
      const obj = message as Json;
      if (!Number.isInteger(obj.id)) {
        throw new ProtocolError("malformed_message", "message must carry an integer id");
      }
      id = obj.id as number;
      if (typeof obj.kind !== "string") {
        throw new ProtocolError("malformed_message", "message must carry a kind string");
      }
      kind = obj.kind;
      payload = this.dispatch(kind, obj);
      return JSON.stringify({ id, kind, ok: true, ...payload });
    } catch (err) {
      const code = err instanceof ProtocolError ? err.code : this.errorCode(err);
      const messageText = err instanceof Error ? err.message : String(err);
      return JSON.stringify({
        id, kind, ok: false, error: { code, message: messageText },
      });
    }
  }

  private errorCode(err: unknown): string {
    if (err instanceof FbnkError) return "bad_features";
    if (err instanceof RleError) return "malformed_message";
    if (err instanceof ModelError) return "token_out_of_vocab";
    if (err instanceof CheckpointError) return "internal";
    return "internal";
  }

  private dispatch(kind: string, obj: Json): Json {
    switch (kind) {
      case "handshake":
        return this.handshake(obj);
      case "load_features":
        return this.loadFeatures(obj);
      case "score_batch":
        return this.scoreBatch(obj);
      case "generate":
        return this.generate(obj);
      case "tokenize":
        return this.tokenizeText(obj);
      case "shutdown":
        return {};
      default:
        throw new ProtocolError("malformed_message", `unknown message kind ${JSON.stringify(kind)}`);
    }
  }

  private handshake(obj: Json): Json {
    if (obj.protocol_version !== PROTOCOL_VERSION) {
      throw new ProtocolError(
        "malformed_message",
        `protocol version mismatch: got ${JSON.stringify(obj.protocol_version)}, ` +
          `serving ${PROTOCOL_VERSION}`
      );
    }
    const surfaces: Record<string, string> = {};
    for (let id = 0; id < this.model.vocabSize; id++) {
      surfaces[String(id)] = this.model.surface(id);
    }
    return {
      protocol_version: PROTOCOL_VERSION,
      tokenizer: {
        vocab_size: this.model.vocabSize,
        bow_token_ids: [...this.model.bowIds].sort((a, b) => a - b),
        punctuation_token_ids: [...this.model.punctuationIds].sort((a, b) => a - b),
        eos_token_id: this.model.eosId,
        token_surfaces: surfaces,
      },
    };
  }

  private loadFeatures(obj: Json): Json {
    const featureId = requireString(obj, "feature_id");
    const b64 = requireString(obj, "fbnk_base64");
    const matrix = decodeFbnkBase64(b64);
    if (matrix.bins !== this.model.nBins) {
      throw new ProtocolError(
        "bad_features",
        `model expects ${this.model.nBins} bins, features have ${matrix.bins}`
      );
    }
    if (matrix.frames > this.config.maxSourcePositions) {
      throw new ProtocolError(
        "bad_features",
        `features exceed max source positions (${matrix.frames} > ` +
          `${this.config.maxSourcePositions})`
      );
    }
    const fingerprint = Buffer.from(matrix.data.buffer, matrix.data.byteOffset,
                                    matrix.data.byteLength).toString("base64");
    const existing = this.features.get(featureId);
    if (existing) {
      if (existing.fingerprint !== fingerprint) {
        throw new ProtocolError(
          "duplicate_feature",
          `feature id ${JSON.stringify(featureId)} already registered with different content`
        );
      }
      return {};
    }
    this.features.set(featureId, { matrix, fingerprint });
    return {};
  }

  private lookup(featureId: string): StoredFeatures {
    const stored = this.features.get(featureId);
    if (!stored) {
      throw new ProtocolError(
        "unknown_feature",
        `feature id ${JSON.stringify(featureId)} was never registered`
      );
    }
    return stored;
  }

  private encodeMasked(stored: StoredFeatures, mask: RlePairs | null): EncoderStates {
    const { frames, data } = stored.matrix;
    let cells = data;
    if (mask !== null) {
      cells = applyCellMask(data, rleToCells(mask, data.length));
    }
    return this.model.encode(frames, cells);
  }

  private resolveMask(obj: Json, maskTable: RlePairs[] | null): RlePairs | null {
    const inline = obj.mask;
    const ref = obj.mask_ref;
    if (inline !== undefined && inline !== null && ref !== undefined && ref !== null) {
      throw new ProtocolError(
        "malformed_message", "a request may carry either an inline mask or a mask_ref");
    }
    if (ref !== undefined && ref !== null) {
      if (!Number.isInteger(ref) || (ref as number) < 0 || maskTable === null
          || (ref as number) >= maskTable.length) {
        throw new ProtocolError(
          "malformed_message", `mask_ref ${ref} outside the batch mask table`);
      }
      return maskTable[ref as number];
    }
    if (inline === undefined || inline === null) return null;
    return parseRlePairs(inline);
  }

  private prefixFor(tokens: number[]): number[] {
    return this.config.prependToken === null
      ? tokens
      : [this.config.prependToken, ...tokens];
  }

  private scoreBatch(obj: Json): Json {
    const rawRequests = obj.requests;
    if (!Array.isArray(rawRequests) || rawRequests.length === 0) {
      throw new ProtocolError("malformed_message",
                              "score_batch needs a non-empty requests list");
    }
    const rawMasks = obj.masks ?? [];
    if (!Array.isArray(rawMasks)) {
      throw new ProtocolError("malformed_message", "score_batch masks must be a list");
    }
    const maskTable = rawMasks.map((m) => parseRlePairs(m));
    const encoderCache = new Map<string, EncoderStates>();
    const responses: Json[] = [];
    for (const raw of rawRequests) {
      if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
        throw new ProtocolError("malformed_message", "score request must be an object");
      }
      const request = raw as Json;
      const featureId = requireString(request, "feature_id");
      const prefix = requireIntList(request.prefix_tokens, "prefix_tokens");
      const continuation = requireIntList(request.continuation_tokens,
                                          "continuation_tokens");
      if (continuation.length === 0) {
        throw new ProtocolError("malformed_message",
                                "continuation_tokens must be non-empty");
      }
      const want = requireIntList(request.want_bow_mass_at ?? [], "want_bow_mass_at");
      if (want.some((i) => i < 0 || i > continuation.length)) {
        throw new ProtocolError(
          "malformed_message",
          "want_bow_mass_at indices must lie in [0, len(continuation)]");
      }
      const stored = this.lookup(featureId);
      const mask = this.resolveMask(request, maskTable);
      const ref = request.mask_ref;
      const cacheKey = Number.isInteger(ref)
        ? `${featureId}#${ref}` : mask === null ? `${featureId}#none` : "";
      let states = cacheKey ? encoderCache.get(cacheKey) : undefined;
      if (!states) {
        states = this.encodeMasked(stored, mask);
        if (cacheKey) encoderCache.set(cacheKey, states);
      }
      const result = this.model.scoreTeacherForced(
        states, this.prefixFor(prefix), continuation, want);
      const masses: Record<string, number> = {};
      for (const [step, mass] of result.boundaryMass) masses[String(step)] = mass;
      responses.push({ token_probs: result.tokenProbs, bow_masses: masses });
    }
    return { responses };
  }

  private generate(obj: Json): Json {
    const featureId = requireString(obj, "feature_id");
    const beamSize = optionalInt(obj, "beam_size", this.config.beamSize);
    const noRepeatNgram = optionalInt(obj, "no_repeat_ngram", this.config.noRepeatNgram);
    const maxLen = optionalInt(obj, "max_len", this.config.maxLen);
    if (beamSize < 1) {
      throw new ProtocolError("malformed_message", "beam_size must be >= 1");
    }
    if (noRepeatNgram < 0 || maxLen < 1) {
      throw new ProtocolError("malformed_message", "invalid generation settings");
    }
    const stored = this.lookup(featureId);
    const inline = obj.mask === undefined || obj.mask === null
      ? null : parseRlePairs(obj.mask);
    const states = this.encodeMasked(stored, inline);
    const tokens = this.model.decode(states, { beamSize, noRepeatNgram, maxLen });
    return { tokens, text: this.model.detokenize(tokens) };
  }

  private tokenizeText(obj: Json): Json {
    const text = requireString(obj, "text");
    return { tokens: this.model.tokenize(text) };
  }
}
