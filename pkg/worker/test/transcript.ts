/** Shared transcript driver: spawns the built worker and replays a frame
 * sequence strictly serially, returning the raw reply lines. */

import { spawn } from "child_process";
import * as path from "path";

export const FRAMES: Record<string, unknown>[] = [
  { id: 1, cmd: "hello", protocol: 1 },
  { id: 2, cmd: "evaluate",
    cell: "[(-1, '3 conv', -1, '2 maxpool')]",
    macro: { M: 1, N: 0, F: 8, lookback: 2, residual: true,
             input_shape: [24, 2], num_classes: 3 },
    training: { epochs: 2, lr: 0.01, wd: 5e-4, batch_size: 16 },
    dataset: "synthetic:48" },
  { id: 3, cmd: "evaluate",
    cell: "[(-2, 'gru', -1, '3 conv')]",
    macro: { M: 1, N: 0, F: 8, lookback: 2, residual: true,
             input_shape: [24, 2], num_classes: 3 },
    training: { epochs: 2, lr: 0.01, wd: 5e-4, batch_size: 16 },
    dataset: "synthetic:48" },
  { id: 4, cmd: "fit_acc", rows: [
    ["[(-1, '3 conv', -1, '2 maxpool')]", 0.52],
    ["[(-2, 'gru', -1, '3 conv')]", 0.71],
    ["[(-1, 'identity', -1, 'identity')]", 0.40],
    ["[(-2, '3 conv', -1, '3 conv')]", 0.66],
    ["[(-2, 'gru', -2, 'gru')]", 0.69],
    ["[(-1, '3 conv', -1, '3 conv');(-2, 'gru', 0, 'identity')]", 0.75]] },
  { id: 5, cmd: "predict_acc", cells: [
    "[(-2, 'gru', -2, '3 conv')]",
    "[(-1, 'identity', -1, '2 maxpool')]"] },
  { id: 6, cmd: "warp" },
  { id: 7, cmd: "evaluate", cell: "not a cell",
    macro: {}, training: {}, dataset: "synthetic:16" },
  { id: 8, cmd: "shutdown" },
];

export function runTranscript(frames = FRAMES): Promise<string[]> {
  const main = path.join(__dirname, "..", "dist", "main.js");
  return new Promise((resolve, reject) => {
    const proc = spawn("node",
      [main, "--deterministic", "--predictor-epochs", "6"],
      { stdio: ["pipe", "pipe", "pipe"] });
    const replies: string[] = [];
    let buf = "";
    let sent = 0;
    const sendNext = () => {
      if (sent < frames.length) {
        proc.stdin.write(JSON.stringify(frames[sent++]) + "\n");
      }
    };
    proc.stdout.on("data", (d: Buffer) => {
      buf += d.toString("utf-8");
      let i;
      while ((i = buf.indexOf("\n")) >= 0) {
        replies.push(buf.slice(0, i));
        buf = buf.slice(i + 1);
        if (replies.length === sent) sendNext();
      }
    });
    proc.on("error", reject);
    proc.on("exit", () => resolve(replies));
    sendNext();
  });
}
