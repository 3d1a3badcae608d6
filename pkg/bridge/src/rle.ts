/**
 * Cell masks on the wire: run-length encoded [bit, run] pairs over the
 * flattened row-major cells, runs covering every cell exactly once.
 */

export class RleError extends Error {}

export type RlePairs = Array<[number, number]>;

const RUN_CAP = 0xffffffff;

export function parseRlePairs(value: unknown): RlePairs {
  if (!Array.isArray(value)) {
    throw new RleError("RLE mask must be a list of [bit, length] pairs");
  }
  const pairs: RlePairs = [];
  for (const entry of value) {
    if (!Array.isArray(entry) || entry.length !== 2) {
      throw new RleError("RLE entry must be a [bit, length] pair");
    }
    const [bit, length] = entry;
    if (!Number.isInteger(bit) || !Number.isInteger(length)) {
      throw new RleError("RLE entries must be integers");
    }
    if ((bit !== 0 && bit !== 1) || length < 1 || length > RUN_CAP) {
      throw new RleError(`invalid RLE pair [${bit}, ${length}]`);
    }
    pairs.push([bit, length]);
  }
  return pairs;
}

/** Expand RLE pairs into a boolean masked-cell vector of the given length. */
export function rleToCells(pairs: RlePairs, nCells: number): Uint8Array {
  const out = new Uint8Array(nCells);
  let pos = 0;
  for (const [bit, length] of pairs) {
    if (pos + length > nCells) {
      throw new RleError("RLE runs exceed the cell count");
    }
    if (bit === 1) out.fill(1, pos, pos + length);
    pos += length;
  }
  if (pos !== nCells) {
    throw new RleError(`RLE runs cover ${pos} cells, expected ${nCells}`);
  }
  return out;
}

/** Zero the masked cells of a copy of the features (raw, pre-normalization). */
export function applyCellMask(data: Float32Array, mask: Uint8Array): Float32Array {
  const out = new Float32Array(data);
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) out[i] = 0;
  }
  return out;
}
