/**
 * Newline-delimited JSON server over stdin/stdout.
 *
 * Frames:
 *   {"id":1,"cmd":"hello","protocol":1}  -> {"id":1,"ok":true,"worker":...}
 *   {"id":2,"cmd":"evaluate","cell":"[...]","macro":{...},"training":{...},
 *    "dataset":"..."}                    -> {"id":2,"accuracy":..,"time_s":..,
 *                                            "params":..}
 *   {"id":3,"cmd":"fit_acc","rows":[["[...]",0.7],...]} -> {"id":3,"ok":true}
 *   {"id":4,"cmd":"predict_acc","cells":[...]}          -> {"id":4,"preds":[..]}
 *   {"id":5,"cmd":"shutdown"}            -> {"id":5,"ok":true} and exit
 * Errors: {"id":..,"error":{"code":..,"message":..}}
 *
 * One request at a time; training owns the process. Numeric results are
 * emitted as decimals with nine significant digits.
 */

import * as path from "path";
import * as readline from "readline";
import { parseCell } from "./cells";
import { resolveDataset } from "./data";
import { Macro } from "./model";
import { AccuracyPredictor } from "./predictor";
import { trainCell, TrainingMap } from "./train";

export interface ServeOptions {
  deterministic?: boolean;
  predictorEpochs?: number;
  dataRoot?: string;
  workerName?: string;
}

function nine(x: number): number {
  return Number(x.toPrecision(9));
}

function fnv(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

function parseMacro(raw: Record<string, unknown>): Macro {
  const shape = (raw.input_shape as number[] | undefined) ?? [32, 32, 3];
  return {
    M: Number(raw.M ?? 3),
    N: Number(raw.N ?? 2),
    F: Number(raw.F ?? 24),
    lookback: Number(raw.lookback ?? 2),
    residual: Boolean(raw.residual ?? true),
    input_shape: shape,
    num_classes: Number(raw.num_classes ?? 10),
  };
}

export function serve(opts: ServeOptions = {}): void {
  const predictor = new AccuracyPredictor();
  let evalCount = 0;
  let queue: Promise<void> = Promise.resolve();

  const reply = (obj: Record<string, unknown>, then?: () => void): void => {
    process.stdout.write(JSON.stringify(obj) + "\n", then);
  };
  const fail = (id: unknown, code: string, message: string): void => {
    reply({ id, error: { code, message } });
  };

  const handle = async (frame: Record<string, unknown>): Promise<void> => {
    const id = frame.id;
    const cmd = frame.cmd;
    try {
      if (cmd === "hello") {
        reply({ id, ok: true, worker: opts.workerName ?? "cellnas-tfjs-worker" });
        return;
      }
      if (cmd === "evaluate") {
        const blocks = parseCell(String(frame.cell ?? ""));
        const macro = parseMacro((frame.macro ?? {}) as Record<string, unknown>);
        const training = (frame.training ?? {}) as TrainingMap;
        let datasetName = String(frame.dataset ?? "");
        if (datasetName && opts.dataRoot && !datasetName.startsWith("synthetic")
            && !path.isAbsolute(datasetName)) {
          datasetName = path.join(opts.dataRoot, datasetName);
        }
        const data = resolveDataset(
          datasetName, macro.input_shape, macro.num_classes, 1234);
        evalCount += 1;
        try {
          const result = await trainCell(blocks, macro, training, data, {
            seed: fnv(String(frame.cell)) % 100000,
            deterministic: opts.deterministic,
            timeValue: 1.5 * evalCount,
          });
          reply({ id, accuracy: nine(result.accuracy),
                  time_s: nine(result.timeS), params: result.params });
        } finally {
          data.trainX.dispose();
          data.trainY.dispose();
          data.testX?.dispose();
          data.testY?.dispose();
        }
        return;
      }
      if (cmd === "fit_acc") {
        const rows = (frame.rows ?? []) as [string, number][];
        await predictor.fit(rows, {
          epochs: opts.predictorEpochs,
          seed: opts.deterministic ? 7 : evalCount,
        });
        reply({ id, ok: true });
        return;
      }
      if (cmd === "predict_acc") {
        const cells = (frame.cells ?? []) as string[];
        const preds = await predictor.predict(cells);
        reply({ id, preds: preds.map(nine) });
        return;
      }
      if (cmd === "shutdown") {
        reply({ id, ok: true }, () => process.exit(0));
        return;
      }
      fail(id, "bad_cmd", `unknown command: ${String(cmd)}`);
    } catch (err) {
      fail(id, "worker_error", err instanceof Error ? err.message : String(err));
    }
  };

  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    if (!line.trim()) return;
    let frame: Record<string, unknown>;
    try {
      frame = JSON.parse(line);
    } catch {
      reply({ id: null, error: { code: "bad_frame",
                                 message: `not JSON: ${line.slice(0, 80)}` } });
      return;
    }
    queue = queue.then(() => handle(frame)); // strictly serial dispatch
  });
  rl.on("close", () => {
    queue.then(() => process.exit(0));
  });
}
