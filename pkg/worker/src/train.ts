/**
 * Proxy and prolonged training of an assembled network.
 *
 * The optimizer is Adam with decoupled weight decay applied to every kernel
 * after each step; the learning rate (and the decay, through it) follows a
 * cosine-restart schedule during search and a plain cosine decay in
 * prolonged mode. Prolonged mode adds label smoothing, scheduled drop path
 * and an optional secondary classification exit weighted 0.75/0.25.
 */

import * as tf from "@tensorflow/tfjs";
import { Block } from "./cells";
import { Dataset } from "./data";
import { buildModel, Macro, trainableParams } from "./model";

export interface TrainingMap {
  epochs?: number;
  lr?: number;
  wd?: number;
  batch_size?: number;
  schedule?: string; // "cosine_restarts" | "cosine" | "constant"
  label_smoothing?: number;
  drop_path?: number;
  secondary_exit?: boolean;
  use_validation?: boolean;
  validation_split?: number;
  [key: string]: unknown;
}

export interface TrainResult {
  accuracy: number;
  timeS: number;
  params: number;
}

function scheduleFactor(kind: string, step: number, totalSteps: number,
                        stepsPerEpoch: number): number {
  if (kind === "constant") return 1;
  if (kind === "cosine_restarts") {
    let cycle = Math.max(stepsPerEpoch, Math.floor(totalSteps / 7));
    let t = step;
    while (t >= cycle) {
      t -= cycle;
      cycle *= 2;
    }
    return 0.5 * (1 + Math.cos((Math.PI * t) / cycle));
  }
  return 0.5 * (1 + Math.cos((Math.PI * step) / Math.max(1, totalSteps)));
}

function smoothedCrossEntropy(smoothing: number) {
  return (yTrue: tf.Tensor, yPred: tf.Tensor): tf.Tensor =>
    tf.tidy(() => {
      const k = yTrue.shape[yTrue.shape.length - 1] as number;
      const smoothed = smoothing > 0
        ? yTrue.mul(1 - smoothing).add(smoothing / k)
        : yTrue;
      const clipped = yPred.clipByValue(1e-7, 1 - 1e-7);
      return smoothed.mul(clipped.log()).sum(-1).neg();
    });
}

export async function trainCell(
  blocks: Block[], macro: Macro, training: TrainingMap, data: Dataset,
  opts: { seed?: number; deterministic?: boolean; timeValue?: number } = {},
): Promise<TrainResult> {
  const epochs = Math.max(1, training.epochs ?? 21);
  const lr0 = training.lr ?? 0.01;
  const wd = training.wd ?? 5e-4;
  const batch = training.batch_size ?? 32;
  const schedule = training.schedule ?? "cosine_restarts";
  const smoothing = training.label_smoothing ?? 0;
  const useValidation = training.use_validation !== false;
  const valSplit = training.validation_split ?? 0.1;
  const dropPathTarget = opts.deterministic ? 0 : (training.drop_path ?? 0);

  const dropVar = dropPathTarget > 0 ? tf.variable(tf.scalar(0)) : null;
  const model = buildModel(blocks, macro, {
    seed: opts.seed ?? 0,
    dropPathRate: dropVar,
    secondaryExit: Boolean(training.secondary_exit),
  });
  const params = trainableParams(model);

  const n = data.trainX.shape[0];
  let trainX = data.trainX;
  let trainY = data.trainY;
  let valX: tf.Tensor | null = null;
  let valY: tf.Tensor | null = null;
  if (useValidation) {
    const nVal = Math.max(1, Math.floor(n * valSplit));
    const nTrain = n - nVal;
    trainX = data.trainX.slice([0], [nTrain]);
    trainY = data.trainY.slice([0], [nTrain]);
    valX = data.trainX.slice([nTrain], [nVal]);
    valY = data.trainY.slice([nTrain], [nVal]);
  }

  const multi = model.outputs.length > 1;
  const loss = smoothedCrossEntropy(smoothing);
  model.compile({
    optimizer: tf.train.adam(lr0),
    loss: multi ? [loss, loss] : loss,
    ...(multi ? { lossWeights: [0.75, 0.25] } : {}),
    metrics: ["accuracy"],
  });

  const stepsPerEpoch = Math.max(1, Math.ceil((trainX.shape[0] as number) / batch));
  const totalSteps = stepsPerEpoch * epochs;
  let step = 0;
  const optimizer = model.optimizer as unknown as { learningRate: number };
  const kernels = model.trainableWeights.filter((w) =>
    /kernel/.test(w.originalName ?? w.name));

  const started = Date.now();
  let bestAccuracy = 0;
  const accKey = (logs: tf.Logs | undefined, prefix: string): number | null => {
    if (!logs) return null;
    for (const key of [`${prefix}main_output_acc`, `${prefix}acc`,
                       `${prefix}main_output_accuracy`, `${prefix}accuracy`]) {
      if (key in logs) return logs[key];
    }
    return null;
  };

  await model.fit(trainX, multi ? [trainY, trainY] : trainY, {
    epochs,
    batchSize: batch,
    shuffle: !opts.deterministic,
    verbose: 0,
    ...(valX ? { validationData: [valX, multi ? [valY!, valY!] : valY!] } : {}),
    callbacks: {
      onEpochBegin: async (epoch) => {
        if (dropVar) {
          dropVar.assign(tf.scalar(dropPathTarget * (epoch / Math.max(1, epochs))));
        }
      },
      onBatchBegin: async () => {
        optimizer.learningRate =
          lr0 * scheduleFactor(schedule, step, totalSteps, stepsPerEpoch);
      },
      onBatchEnd: async () => {
        const factor = 1 - optimizer.learningRate * wd;
        if (wd > 0 && factor < 1) {
          tf.tidy(() => {
            for (const w of kernels) {
              w.write(w.read().mul(factor)); // write() copies; tidy reclaims temps
            }
          });
        }
        step += 1;
      },
      onEpochEnd: async (_epoch, logs) => {
        const acc = valX ? accKey(logs, "val_") : accKey(logs, "");
        if (acc !== null && acc > bestAccuracy) bestAccuracy = acc;
        await tf.nextFrame();
      },
    },
  });

  // with validation disabled (final training) quality comes from the test set
  if (!valX && data.testX && data.testY) {
    const evalOut = model.evaluate(
      data.testX, multi ? [data.testY, data.testY] : data.testY,
      { batchSize: batch, verbose: 0 }) as tf.Scalar[] | tf.Scalar;
    const scalars = Array.isArray(evalOut) ? evalOut : [evalOut];
    // evaluate() returns [loss, ...metrics]; the main accuracy is the first metric
    const accIdx = multi ? 3 : 1;
    bestAccuracy = (await scalars[Math.min(accIdx, scalars.length - 1)].data())[0];
    scalars.forEach((s) => s.dispose());
  }

  const wall = (Date.now() - started) / 1000;
  const timeS = opts.deterministic
    ? (opts.timeValue ?? 1.0)
    : Math.max(wall, 1e-3);

  if (valX) {
    valX.dispose();
    valY!.dispose();
    trainX.dispose();
    trainY.dispose();
  }
  model.dispose();
  dropVar?.dispose();

  return {
    accuracy: Math.min(1, Math.max(0, bestAccuracy)),
    timeS,
    params,
  };
}
