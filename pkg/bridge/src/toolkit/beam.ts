/**
 * Beam search over an arbitrary step-distribution function, with the
 * standard no-repeat-ngram constraint. Deterministic: ties break toward the
 * lexicographically smaller token sequence.
 */

export interface BeamOptions {
  beamSize: number;
  noRepeatNgram: number;
  maxLen: number;
  eosId: number;
}

export type StepFn = (prefix: number[], position: number) => Float64Array;

interface Beam {
  tokens: number[];
  logProb: number;
  done: boolean;
}

function bannedTokens(tokens: number[], ngram: number): Set<number> {
  const banned = new Set<number>();
  if (ngram <= 0 || tokens.length < ngram - 1) return banned;
  const tailStart = tokens.length - (ngram - 1);
  const tail = tokens.slice(tailStart).join(",");
  for (let i = 0; i + ngram <= tokens.length; i++) {
    const window = tokens.slice(i, i + ngram - 1).join(",");
    if (window === tail) banned.add(tokens[i + ngram - 1]);
  }
  return banned;
}

function compareBeams(a: Beam, b: Beam): number {
  if (a.logProb !== b.logProb) return b.logProb - a.logProb;
  const n = Math.min(a.tokens.length, b.tokens.length);
  for (let i = 0; i < n; i++) {
    if (a.tokens[i] !== b.tokens[i]) return a.tokens[i] - b.tokens[i];
  }
  return a.tokens.length - b.tokens.length;
}

export function beamSearch(step: StepFn, opts: BeamOptions): number[] {
  if (opts.beamSize < 1) throw new Error("beam size must be >= 1");
  let beams: Beam[] = [{ tokens: [], logProb: 0, done: false }];
  for (let position = 0; position < opts.maxLen; position++) {
    if (beams.every((b) => b.done)) break;
    const candidates: Beam[] = [];
    for (const beam of beams) {
      if (beam.done) {
        candidates.push(beam);
        continue;
      }
      const dist = step(beam.tokens, position);
      const banned = bannedTokens([...beam.tokens], opts.noRepeatNgram);
      for (let token = 0; token < dist.length; token++) {
        const p = dist[token];
        if (p <= 0 || banned.has(token)) continue;
        candidates.push({
          tokens: [...beam.tokens, token],
          logProb: beam.logProb + Math.log(p),
          done: token === opts.eosId,
        });
      }
    }
    if (!candidates.length) break;
    candidates.sort(compareBeams);
    beams = candidates.slice(0, opts.beamSize);
  }
  const best = beams.slice().sort(compareBeams)[0];
  const tokens = best.tokens;
  return tokens.length && tokens[tokens.length - 1] === opts.eosId
    ? tokens.slice(0, -1)
    : tokens;
}
