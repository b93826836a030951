/**
 * Datasets: a deterministic synthetic classification generator for desk-scale
 * runs, and a directory convention of train_x/train_y/test_x/test_y JSON
 * array files for real data.
 */

import * as fs from "fs";
import * as path from "path";
import * as tf from "@tensorflow/tfjs";

export interface Dataset {
  trainX: tf.Tensor;
  trainY: tf.Tensor; // one-hot
  testX: tf.Tensor | null;
  testY: tf.Tensor | null;
  numClasses: number;
}

/** Small deterministic PRNG (mulberry32). */
export function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Class-conditional waves (series) or oriented gradients (images) plus
 * noise; fully determined by (shape, classes, n, seed). */
export function syntheticDataset(inputShape: number[], numClasses: number,
                                 n: number, seed: number): Dataset {
  const rand = rng(seed);
  const perSample = inputShape.reduce((a, b) => a * b, 1);
  const xs = new Float32Array(n * perSample);
  const labels = new Int32Array(n);
  for (let i = 0; i < n; i++) {
    const cls = i % numClasses;
    labels[i] = cls;
    const freq = 1 + cls;
    if (inputShape.length === 2) {
      const [len, ch] = inputShape;
      for (let t = 0; t < len; t++) {
        for (let c = 0; c < ch; c++) {
          const phase = (c / ch) * Math.PI;
          xs[i * perSample + t * ch + c] =
            Math.sin((2 * Math.PI * freq * t) / len + phase)
            + 0.25 * (rand() - 0.5);
        }
      }
    } else {
      const [h, w, ch] = inputShape;
      const angle = (cls / numClasses) * Math.PI;
      const [dx, dy] = [Math.cos(angle), Math.sin(angle)];
      for (let y = 0; y < h; y++) {
        for (let x = 0; x < w; x++) {
          for (let c = 0; c < ch; c++) {
            const v = (dx * x) / w + (dy * y) / h;
            xs[i * perSample + (y * w + x) * ch + c] =
              Math.sin(2 * Math.PI * (freq / 2) * v) + 0.25 * (rand() - 0.5);
          }
        }
      }
    }
  }
  // deterministic shuffle so class labels are not ordered
  const order = Array.from({ length: n }, (_, i) => i);
  for (let i = n - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [order[i], order[j]] = [order[j], order[i]];
  }
  const sx = new Float32Array(n * perSample);
  const sy = new Int32Array(n);
  order.forEach((src, dst) => {
    sx.set(xs.subarray(src * perSample, (src + 1) * perSample), dst * perSample);
    sy[dst] = labels[src];
  });
  return {
    trainX: tf.tensor(sx, [n, ...inputShape]),
    trainY: tf.oneHot(tf.tensor1d(sy, "int32"), numClasses),
    testX: null,
    testY: null,
    numClasses,
  };
}

function readArray(file: string): number[] | number[][] | number[][][] | number[][][][] {
  return JSON.parse(fs.readFileSync(file, "utf-8"));
}

/** Directory with train_x.json / train_y.json / test_x.json / test_y.json;
 * x are nested sample arrays, y are integer class labels. */
export function loadDirectory(dir: string, numClasses: number): Dataset {
  const need = (name: string) => {
    const p = path.join(dir, name);
    if (!fs.existsSync(p)) throw new Error(`dataset file missing: ${p}`);
    return p;
  };
  const trainX = tf.tensor(readArray(need("train_x.json")) as number[][]);
  const trainYRaw = readArray(need("train_y.json")) as number[];
  const k = numClasses || Math.max(...trainYRaw) + 1;
  const trainY = tf.oneHot(tf.tensor1d(trainYRaw, "int32"), k);
  let testX: tf.Tensor | null = null;
  let testY: tf.Tensor | null = null;
  const tx = path.join(dir, "test_x.json");
  if (fs.existsSync(tx)) {
    testX = tf.tensor(readArray(tx) as number[][]);
    testY = tf.oneHot(
      tf.tensor1d(readArray(path.join(dir, "test_y.json")) as number[], "int32"), k);
  }
  return { trainX, trainY, testX, testY, numClasses: k };
}

/** "synthetic", "synthetic:<n>", or a directory path. */
export function resolveDataset(name: string, inputShape: number[],
                               numClasses: number, seed: number): Dataset {
  if (!name || name === "synthetic" || name.startsWith("synthetic:")) {
    const n = name.includes(":") ? Number(name.split(":")[1]) : 256;
    return syntheticDataset(inputShape, numClasses, n, seed);
  }
  return loadDirectory(name, numClasses);
}
