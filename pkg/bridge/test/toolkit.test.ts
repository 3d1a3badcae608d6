import { describe, expect, it } from "vitest";

import { decodeFbnk, encodeFbnk, FbnkError } from "../src/fbnk";
import { applyCellMask, parseRlePairs, RleError, rleToCells } from "../src/rle";
import { beamSearch } from "../src/toolkit/beam";
import { buildDemoCheckpoint, validateCheckpoint } from "../src/toolkit/checkpoint";
import { MiniS2TModel } from "../src/toolkit/model";

describe("fbnk", () => {
  it("round-trips matrices bit-exactly", () => {
    const data = new Float32Array([1.5, -2.25, 3.125, 0.0, 42.0, -0.5]);
    const decoded = decodeFbnk(encodeFbnk({ frames: 2, bins: 3, data }));
    expect(decoded.frames).toBe(2);
    expect(decoded.bins).toBe(3);
    expect([...decoded.data]).toEqual([...data]);
  });

  it("rejects bad headers and payloads", () => {
    const good = encodeFbnk({ frames: 1, bins: 2, data: new Float32Array([1, 2]) });
    const badMagic = new Uint8Array(good);
    badMagic[0] = 0x58;
    expect(() => decodeFbnk(badMagic)).toThrow(FbnkError);
    expect(() => decodeFbnk(good.slice(0, 10))).toThrow(FbnkError);
    const truncated = good.slice(0, good.length - 4);
    expect(() => decodeFbnk(truncated)).toThrow(FbnkError);
    const nan = encodeFbnk({ frames: 1, bins: 1, data: new Float32Array([1]) });
    new DataView(nan.buffer).setFloat32(13, NaN, true);
    expect(() => decodeFbnk(nan)).toThrow(/non-finite/);
  });
});

describe("rle", () => {
  it("expands runs over all cells", () => {
    const cells = rleToCells(parseRlePairs([[0, 2], [1, 3], [0, 1]]), 6);
    expect([...cells]).toEqual([0, 0, 1, 1, 1, 0]);
  });

  it("validates pairs and totals", () => {
    expect(() => parseRlePairs([[2, 3]])).toThrow(RleError);
    expect(() => parseRlePairs([[1, 0]])).toThrow(RleError);
    expect(() => rleToCells(parseRlePairs([[1, 3]]), 4)).toThrow(RleError);
    expect(() => rleToCells(parseRlePairs([[1, 5]]), 4)).toThrow(RleError);
  });

  it("zeroes masked cells on a copy", () => {
    const data = new Float32Array([1, 2, 3, 4]);
    const out = applyCellMask(data, Uint8Array.from([0, 1, 0, 1]));
    expect([...out]).toEqual([1, 0, 3, 0]);
    expect([...data]).toEqual([1, 2, 3, 4]);
  });
});

describe("beam search", () => {
  const V = 4;
  const EOS = 3;

  it("finds the greedy path for a peaked distribution", () => {
    const peaked = [0.7, 0.15, 0.1, 0.05];
    const step = (prefix: number[], position: number) => {
      const dist = new Float64Array(V);
      if (position >= 2) {
        dist[EOS] = 1;
        return dist;
      }
      peaked.forEach((p, i) => (dist[i] = p));
      return dist;
    };
    expect(beamSearch(step, { beamSize: 3, noRepeatNgram: 0, maxLen: 8, eosId: EOS }))
      .toEqual([0, 0]);
  });

  it("beats greedy when a later step rewards the lower-probability start", () => {
    // greedy takes token 0 first (0.6) but its best finish is only 0.6 * 0.4;
    // starting with token 1 (0.4) finishes at 0.4 * 0.99
    const step = (prefix: number[]) => {
      const dist = new Float64Array(V);
      if (prefix.length === 0) {
        dist[0] = 0.6;
        dist[1] = 0.4;
      } else if (prefix.length === 1) {
        if (prefix[0] === 0) {
          dist[1] = 0.3;
          dist[2] = 0.3;
          dist[EOS] = 0.4;
        } else {
          dist[EOS] = 0.99;
          dist[2] = 0.01;
        }
      } else {
        dist[EOS] = 1;
      }
      return dist;
    };
    const greedy = beamSearch(step, { beamSize: 1, noRepeatNgram: 0, maxLen: 4, eosId: EOS });
    const wide = beamSearch(step, { beamSize: 4, noRepeatNgram: 0, maxLen: 4, eosId: EOS });
    expect(greedy[0]).toBe(0);
    expect(wide).toEqual([1]); // 0.4 * 0.99 > 0.6 * 0.4
  });

  it("enforces the no-repeat-ngram constraint", () => {
    // a model that always wants to repeat token 0
    const step = () => {
      const dist = new Float64Array(V);
      dist[0] = 0.9;
      dist[1] = 0.05;
      dist[2] = 0.04;
      dist[EOS] = 0.01;
      return dist;
    };
    const tokens = beamSearch(step, { beamSize: 2, noRepeatNgram: 2, maxLen: 10, eosId: EOS });
    for (let i = 0; i + 2 <= tokens.length; i++) {
      for (let j = i + 1; j + 2 <= tokens.length; j++) {
        const a = tokens.slice(i, i + 2).join(",");
        const b = tokens.slice(j, j + 2).join(",");
        expect(a).not.toBe(b);
      }
    }
  });
});

describe("mini model", () => {
  const makeFeatures = (seed: number, frames = 12, bins = 20) => {
    const data = new Float32Array(frames * bins);
    for (let i = 0; i < data.length; i++) {
      data[i] = Math.abs(Math.sin(seed * 13.7 + i * 0.61)) + 0.1;
    }
    return { frames, data };
  };

  it("checkpoint validates and yields coherent distributions", () => {
    const ckpt = validateCheckpoint(buildDemoCheckpoint());
    const model = new MiniS2TModel(ckpt);
    const { frames, data } = makeFeatures(1);
    const states = model.encode(frames, data);
    const dist = model.stepDistribution(states, model.eosId, 0);
    expect(dist.length).toBe(model.vocabSize);
    let total = 0;
    for (const p of dist) {
      expect(p).toBeGreaterThanOrEqual(0);
      expect(p).toBeLessThanOrEqual(1);
      total += p;
    }
    expect(total).toBeCloseTo(1, 9);
  });

  it("teacher-forced scoring is deterministic across fresh instances", () => {
    const { frames, data } = makeFeatures(2);
    const results = [0, 1].map(() => {
      const model = new MiniS2TModel(buildDemoCheckpoint());
      const states = model.encode(frames, new Float32Array(data));
      return model.scoreTeacherForced(states, [0, 1], [2, 3, 4], [0, 3]);
    });
    expect(results[0].tokenProbs).toEqual(results[1].tokenProbs);
    expect([...results[0].boundaryMass]).toEqual([...results[1].boundaryMass]);
    for (const p of results[0].tokenProbs) {
      expect(p).toBeGreaterThanOrEqual(0);
      expect(p).toBeLessThanOrEqual(1);
    }
    for (const mass of results[0].boundaryMass.values()) {
      expect(mass).toBeGreaterThanOrEqual(0);
      expect(mass).toBeLessThanOrEqual(1 + 1e-12);
    }
  });

  it("masks change the normalization of untouched cells", () => {
    // zeroing happens on raw features, so CMVN statistics shift and even
    // probabilities conditioned on unmasked regions must move
    const model = new MiniS2TModel(buildDemoCheckpoint());
    const { frames, data } = makeFeatures(3);
    const plain = model.scoreTeacherForced(
      model.encode(frames, new Float32Array(data)), [], [1], []);
    const masked = new Float32Array(data);
    for (let i = 0; i < 40; i++) masked[i] = 0; // first two frames
    const perturbed = model.scoreTeacherForced(
      model.encode(frames, masked), [], [1], []);
    expect(perturbed.tokenProbs[0]).not.toBe(plain.tokenProbs[0]);
  });

  it("tokenize and detokenize are inverse on in-vocab words", () => {
    const model = new MiniS2TModel(buildDemoCheckpoint());
    for (const text of ["sono", "bella", "sono bella oggi", "studentessa",
                        "curiosissima oggi"]) {
      expect(model.detokenize(model.tokenize(text))).toBe(text);
    }
  });

  it("tokenize falls back to unk on unknown pieces", () => {
    const model = new MiniS2TModel(buildDemoCheckpoint());
    const tokens = model.tokenize("zzz");
    expect(tokens).toContain(model.unkId);
  });

  it("rejects feature shapes that disagree with the checkpoint", () => {
    const model = new MiniS2TModel(buildDemoCheckpoint());
    expect(() => model.encode(3, new Float32Array(10))).toThrow();
  });
});
