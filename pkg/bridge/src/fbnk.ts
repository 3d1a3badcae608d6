/**
 * FBNK feature container: magic "FBNK", one version byte, two little-endian
 * uint32 dimensions (frames, bins), then row-major little-endian float32
 * values. The engine ships feature matrices base64-encoded in this layout.
 */

export interface FeatureMatrix {
  frames: number;
  bins: number;
  /** row-major, length frames * bins */
  data: Float32Array;
}

export class FbnkError extends Error {}

const MAGIC = "FBNK";
const VERSION = 1;
const HEADER_BYTES = 4 + 1 + 4 + 4;

export function decodeFbnk(bytes: Uint8Array): FeatureMatrix {
  if (bytes.length < HEADER_BYTES) {
    throw new FbnkError(`file too short for FBNK header (${bytes.length} bytes)`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const magic = String.fromCharCode(bytes[0], bytes[1], bytes[2], bytes[3]);
  if (magic !== MAGIC) {
    throw new FbnkError(`bad magic ${JSON.stringify(magic)}`);
  }
  const version = view.getUint8(4);
  if (version !== VERSION) {
    throw new FbnkError(`unsupported FBNK version ${version}`);
  }
  const frames = view.getUint32(5, true);
  const bins = view.getUint32(9, true);
  if (frames < 1 || bins < 1) {
    throw new FbnkError(`header declares empty matrix ${frames}x${bins}`);
  }
  const expected = frames * bins * 4;
  const payload = bytes.length - HEADER_BYTES;
  if (payload !== expected) {
    throw new FbnkError(
      `header declares ${frames}x${bins} (${expected} payload bytes), found ${payload}`
    );
  }
  const data = new Float32Array(frames * bins);
  for (let i = 0; i < data.length; i++) {
    const value = view.getFloat32(HEADER_BYTES + i * 4, true);
    if (!Number.isFinite(value)) {
      throw new FbnkError("FBNK payload contains non-finite values");
    }
    data[i] = value;
  }
  return { frames, bins, data };
}

export function decodeFbnkBase64(b64: string): FeatureMatrix {
  let bytes: Buffer;
  try {
    bytes = Buffer.from(b64, "base64");
  } catch (err) {
    throw new FbnkError(`invalid base64 payload: ${err}`);
  }
  // Buffer.from silently drops garbage; verify the round trip
  if (bytes.toString("base64").replace(/=+$/, "") !== b64.replace(/\s+/g, "").replace(/=+$/, "")) {
    throw new FbnkError("invalid base64 payload");
  }
  return decodeFbnk(new Uint8Array(bytes));
}

export function encodeFbnk(matrix: FeatureMatrix): Uint8Array {
  const out = new Uint8Array(HEADER_BYTES + matrix.data.length * 4);
  const view = new DataView(out.buffer);
  for (let i = 0; i < 4; i++) out[i] = MAGIC.charCodeAt(i);
  view.setUint8(4, VERSION);
  view.setUint32(5, matrix.frames, true);
  view.setUint32(9, matrix.bins, true);
  for (let i = 0; i < matrix.data.length; i++) {
    view.setFloat32(HEADER_BYTES + i * 4, matrix.data[i], true);
  }
  return out;
}
