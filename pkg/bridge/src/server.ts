/**
 * Stdio protocol loop: one JSON object per line in, one per line out.
 * Run with: node dist/server.js --checkpoint checkpoints/demo.json
 */

import * as readline from "node:readline";

import { Bridge } from "./bridge";
import { parseServerConfig } from "./config";
import { loadCheckpoint } from "./toolkit/checkpoint";
import { MiniS2TModel } from "./toolkit/model";

export function main(argv: string[]): void {
  const config = parseServerConfig(argv);
  const model = new MiniS2TModel(loadCheckpoint(config.checkpoint));
  const bridge = new Bridge(model, config.bridge);

  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    if (!line.trim()) return;
    const reply = bridge.handleLine(line);
    process.stdout.write(reply + "\n");
    let parsed: { kind?: string; ok?: boolean } = {};
    try {
      parsed = JSON.parse(line);
    } catch {
      return;
    }
    if (parsed && parsed.kind === "shutdown") {
      rl.close();
      process.exit(0);
    }
  });
  rl.on("close", () => process.exit(0));
}

if (require.main === module) {
  try {
    main(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(`bridge startup failed: ${err}\n`);
    process.exit(1);
  }
}
