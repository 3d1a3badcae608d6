/** Command-line configuration for the bridge process. */

import { parseArgs } from "node:util";

import { BridgeConfig, DEFAULT_CONFIG } from "./bridge";

export interface ServerConfig {
  checkpoint: string;
  device: string;
  bridge: BridgeConfig;
}

export function parseServerConfig(argv: string[]): ServerConfig {
  const { values } = parseArgs({
    args: argv,
    options: {
      checkpoint: { type: "string" },
      device: { type: "string", default: "cpu" },
      "batch-size": { type: "string", default: String(DEFAULT_CONFIG.batchSize) },
      "beam-size": { type: "string", default: String(DEFAULT_CONFIG.beamSize) },
      "no-repeat-ngram": { type: "string", default: String(DEFAULT_CONFIG.noRepeatNgram) },
      "max-len": { type: "string", default: String(DEFAULT_CONFIG.maxLen) },
      "max-source-positions": {
        type: "string", default: String(DEFAULT_CONFIG.maxSourcePositions),
      },
      "prepend-token": { type: "string" },
    },
  });
  if (!values.checkpoint) {
    throw new Error("--checkpoint is required");
  }
  if (values.device !== "cpu") {
    throw new Error(`unsupported device ${values.device}; this bridge is CPU-only`);
  }
  const integer = (name: string, raw: string): number => {
    const value = Number(raw);
    if (!Number.isInteger(value) || value < 0) {
      throw new Error(`${name} must be a non-negative integer, got ${raw}`);
    }
    return value;
  };
  return {
    checkpoint: values.checkpoint,
    device: values.device,
    bridge: {
      batchSize: integer("--batch-size", values["batch-size"]!),
      beamSize: integer("--beam-size", values["beam-size"]!),
      noRepeatNgram: integer("--no-repeat-ngram", values["no-repeat-ngram"]!),
      maxLen: integer("--max-len", values["max-len"]!),
      maxSourcePositions: integer("--max-source-positions",
                                  values["max-source-positions"]!),
      prependToken: values["prepend-token"] === undefined
        ? null : integer("--prepend-token", values["prepend-token"]),
    },
  };
}
