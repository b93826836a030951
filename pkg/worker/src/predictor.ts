/**
 * The exact accuracy predictor: two categorical inputs of shape (B, 2) — the
 * block input refs and the block operators, zero-padded to B blocks —
 * embedded separately, reshaped together into per-block features, projected
 * by two parallel convolutions into the Q and K of a self-attention layer,
 * then a bidirectional LSTM and a single sigmoid unit. Trained as a 5-fold
 * ensemble (each member holds out a different fold), Adam at 0.004 with
 * 1e-5 weight regularization.
 *
 * Unstated reference hyperparameters (embedding widths, Q/K filters, LSTM
 * units, epochs) are worker defaults, documented here and unverified.
 */

import * as tf from "@tensorflow/tfjs";
import { Block, parseCell } from "./cells";

const EMBED_INPUTS = 8;
const EMBED_OPS = 16;
const QK_FILTERS = 32;
const LSTM_UNITS = 16;
const DEFAULT_EPOCHS = 50;
const PATIENCE = 5;
const FOLDS = 5;

let attnCount = 0;

/** Scaled dot-product attention: softmax(Q K^T / sqrt(d)) V. */
class SelfAttention extends tf.layers.Layer {
  static className = "SelfAttention";

  constructor() {
    super({ name: `self_attention_${attnCount++}` });
  }

  computeOutputShape(inputShape: tf.Shape[]): tf.Shape {
    return inputShape[2]; // shape of V
  }

  call(inputs: tf.Tensor[]): tf.Tensor {
    return tf.tidy(() => {
      const [q, k, v] = inputs;
      const d = q.shape[q.shape.length - 1] as number;
      const scores = tf.matMul(q, k, false, true).div(Math.sqrt(d));
      return tf.matMul(tf.softmax(scores, -1), v);
    });
  }
}

export interface PredictorOptions {
  epochs?: number;
  seed?: number;
}

export interface Vocab {
  opIndex: Map<string, number>;
  maxBlocks: number;
  maxLookback: number;
}

export function buildVocab(cells: Block[][]): Vocab {
  const opIndex = new Map<string, number>();
  // the recurrent stack needs >= 2 timesteps; shorter cells are zero-padded
  let maxBlocks = 2;
  let maxLookback = 1;
  for (const blocks of cells) {
    maxBlocks = Math.max(maxBlocks, blocks.length);
    for (const b of blocks) {
      for (const op of [b.op1, b.op2]) {
        if (!opIndex.has(op.token)) opIndex.set(op.token, opIndex.size + 1);
      }
      maxLookback = Math.max(maxLookback, -Math.min(b.in1, b.in2, -1));
    }
  }
  return { opIndex, maxBlocks, maxLookback };
}

export function encode(cells: Block[][], vocab: Vocab): { ins: tf.Tensor; ops: tf.Tensor } {
  const { opIndex, maxBlocks: B, maxLookback: L } = vocab;
  const n = cells.length;
  const ins = new Int32Array(n * B * 2);
  const ops = new Int32Array(n * B * 2);
  const unknown = opIndex.size + 1;
  cells.forEach((blocks, i) => {
    blocks.slice(0, B).forEach((b, j) => {
      const base = i * B * 2 + j * 2;
      ins[base] = b.in1 + L + 1; // 1-indexed; 0 is padding
      ins[base + 1] = b.in2 + L + 1;
      ops[base] = opIndex.get(b.op1.token) ?? unknown;
      ops[base + 1] = opIndex.get(b.op2.token) ?? unknown;
    });
  });
  return {
    ins: tf.tensor(ins, [n, B, 2], "int32"),
    ops: tf.tensor(ops, [n, B, 2], "int32"),
  };
}

function buildNetwork(vocab: Vocab, seed: number): tf.LayersModel {
  const B = vocab.maxBlocks;
  const reg = () => tf.regularizers.l2({ l2: 1e-5 });
  let s = seed * 100 + 1;
  const init = () => tf.initializers.glorotUniform({ seed: s++ });

  const inRefs = tf.layers.input({ shape: [B, 2], dtype: "int32" });
  const inOps = tf.layers.input({ shape: [B, 2], dtype: "int32" });

  const embRefs = tf.layers.embedding({
    inputDim: vocab.maxLookback + B + 1, outputDim: EMBED_INPUTS,
    embeddingsInitializer: init(), embeddingsRegularizer: reg(),
  }).apply(inRefs) as tf.SymbolicTensor; // (B, 2, E_in)
  const embOps = tf.layers.embedding({
    inputDim: vocab.opIndex.size + 2, outputDim: EMBED_OPS,
    embeddingsInitializer: init(), embeddingsRegularizer: reg(),
  }).apply(inOps) as tf.SymbolicTensor; // (B, 2, E_op)

  // reshape the two embeddings together into one feature row per block
  const flatRefs = tf.layers.reshape({ targetShape: [B, 2 * EMBED_INPUTS] })
    .apply(embRefs) as tf.SymbolicTensor;
  const flatOps = tf.layers.reshape({ targetShape: [B, 2 * EMBED_OPS] })
    .apply(embOps) as tf.SymbolicTensor;
  const features = tf.layers.concatenate({})
    .apply([flatRefs, flatOps]) as tf.SymbolicTensor; // (B, 2E_in + 2E_op)

  const q = tf.layers.conv1d({
    filters: QK_FILTERS, kernelSize: 1, padding: "same",
    kernelInitializer: init(), kernelRegularizer: reg(),
  }).apply(features) as tf.SymbolicTensor;
  const k = tf.layers.conv1d({
    filters: QK_FILTERS, kernelSize: 1, padding: "same",
    kernelInitializer: init(), kernelRegularizer: reg(),
  }).apply(features) as tf.SymbolicTensor;

  const attended = new SelfAttention().apply([q, k, features]) as tf.SymbolicTensor;

  const recurrent = tf.layers.bidirectional({
    layer: tf.layers.lstm({
      units: LSTM_UNITS, kernelInitializer: init(),
      recurrentInitializer: init(), kernelRegularizer: reg(),
    }) as tf.RNN,
    mergeMode: "concat",
  }).apply(attended) as tf.SymbolicTensor;

  const out = tf.layers.dense({
    units: 1, activation: "sigmoid",
    kernelInitializer: init(), kernelRegularizer: reg(),
  }).apply(recurrent) as tf.SymbolicTensor;

  return tf.model({ inputs: [inRefs, inOps], outputs: out });
}

export class AccuracyPredictor {
  private members: tf.LayersModel[] = [];
  private vocab: Vocab | null = null;

  async fit(rows: [string, number][], opts: PredictorOptions = {}): Promise<void> {
    if (rows.length < 2) throw new Error("need at least 2 rows");
    for (const [, acc] of rows) {
      if (!(acc >= 0 && acc <= 1)) throw new Error(`accuracy out of range: ${acc}`);
    }
    this.dispose();
    const cells = rows.map(([text]) => parseCell(text));
    const vocab = buildVocab(cells);
    this.vocab = vocab;
    const { ins, ops } = encode(cells, vocab);
    const y = tf.tensor2d(rows.map(([, acc]) => [acc]));
    const epochs = opts.epochs ?? DEFAULT_EPOCHS;
    const n = rows.length;
    const folds = Math.min(FOLDS, n);

    try {
      for (let f = 0; f < folds; f++) {
        const valIdx: number[] = [];
        const trIdx: number[] = [];
        for (let i = 0; i < n; i++) (i % folds === f ? valIdx : trIdx).push(i);
        if (trIdx.length === 0) trIdx.push(...valIdx);
        const gather = (t: tf.Tensor, idx: number[]) =>
          tf.gather(t, tf.tensor1d(idx, "int32"));
        const member = buildNetwork(vocab, (opts.seed ?? 0) * FOLDS + f);
        member.compile({ optimizer: tf.train.adam(0.004), loss: "meanSquaredError" });
        let bestLoss = Infinity;
        let sinceBest = 0;
        await member.fit(
          [gather(ins, trIdx), gather(ops, trIdx)], gather(y, trIdx), {
            epochs,
            batchSize: 16,
            shuffle: false,
            verbose: 0,
            validationData: [[gather(ins, valIdx), gather(ops, valIdx)],
                             gather(y, valIdx)],
            callbacks: {
              onEpochEnd: async (_e, logs) => {
                const vl = logs?.val_loss ?? Infinity;
                if (vl < bestLoss - 1e-6) {
                  bestLoss = vl;
                  sinceBest = 0;
                } else if (++sinceBest > PATIENCE) {
                  member.stopTraining = true;
                }
              },
            },
          });
        this.members.push(member);
      }
    } finally {
      ins.dispose();
      ops.dispose();
      y.dispose();
    }
  }

  /** Mean of the fold members' sigmoid outputs, clamped to [0, 1]. */
  async predict(cellTexts: string[]): Promise<number[]> {
    if (!this.vocab || this.members.length === 0) {
      throw new Error("predictor not fitted");
    }
    const cells = cellTexts.map(parseCell);
    const { ins, ops } = encode(cells, this.vocab);
    try {
      const preds = this.members.map(
        (m) => m.predict([ins, ops]) as tf.Tensor);
      const mean = tf.tidy(() => tf.stack(preds).mean(0).reshape([cells.length]));
      preds.forEach((p) => p.dispose());
      const values = Array.from(await mean.data());
      mean.dispose();
      return values.map((v) => Math.min(1, Math.max(0, v)));
    } finally {
      ins.dispose();
      ops.dispose();
    }
  }

  get memberCount(): number {
    return this.members.length;
  }

  async memberPredictions(cellTexts: string[]): Promise<number[][]> {
    const cells = cellTexts.map(parseCell);
    const { ins, ops } = encode(cells, this.vocab!);
    try {
      const out: number[][] = [];
      for (const m of this.members) {
        const p = m.predict([ins, ops]) as tf.Tensor;
        out.push(Array.from(await p.data()));
        p.dispose();
      }
      return out;
    } finally {
      ins.dispose();
      ops.dispose();
    }
  }

  dispose(): void {
    this.members.forEach((m) => m.dispose());
    this.members = [];
    this.vocab = null;
  }
}
