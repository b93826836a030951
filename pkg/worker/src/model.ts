/**
 * Assemble a trainable network from (cell blocks, macro shape).
 *
 * The stack is M motifs of N normal cells plus one reduction cell; cells of
 * motif m work at F * 2^(m-1) channels and every reduction halves the
 * spatial dims (stride-2 on lookback-consuming operators). Lookbacks that
 * point before the first cell resolve to the stem. Unused block outputs are
 * concatenated and squeezed back to the cell width with a pointwise
 * convolution; cell outputs can be residual with the nearest used lookback.
 * Cells not backward-reachable from the output never enter the layer graph,
 * so they carry no weights.
 */

import * as tf from "@tensorflow/tfjs";
import { Block, Operator, unusedBlocks, usedLookbacks } from "./cells";

export interface Macro {
  M: number;
  N: number;
  F: number;
  lookback: number;
  residual: boolean;
  input_shape: number[]; // [H, W, C] images or [L, C] series
  num_classes: number;
}

export interface BuildOptions {
  seed?: number;
  dropPathRate?: tf.Variable | null; // scalar in [0, 1); null disables
  secondaryExit?: boolean;
}

type Sym = tf.SymbolicTensor;

let dropPathCount = 0;

/** Per-sample path dropout whose rate lives in a shared scalar variable so a
 * schedule can raise it across epochs. */
class DropPath extends tf.layers.Layer {
  static className = "DropPath";
  private readonly rateVar: tf.Variable;

  constructor(rateVar: tf.Variable) {
    super({ name: `drop_path_${dropPathCount++}` });
    this.rateVar = rateVar;
    this.supportsMasking = true;
  }

  computeOutputShape(inputShape: tf.Shape): tf.Shape {
    return inputShape;
  }

  call(inputs: tf.Tensor | tf.Tensor[], kwargs: { training?: boolean }): tf.Tensor {
    const x = Array.isArray(inputs) ? inputs[0] : inputs;
    if (!kwargs || !kwargs.training) return x;
    return tf.tidy(() => {
      const rate = this.rateVar.dataSync()[0];
      if (rate <= 0) return x.clone();
      const keep = 1 - rate;
      const maskShape = x.shape.map((_, i) => (i === 0 ? x.shape[0] : 1));
      const mask = tf.randomUniform(maskShape as number[]).less(keep).cast("float32");
      return x.mul(mask).div(keep);
    });
  }
}

export class Builder {
  private seedCounter: number;
  private readonly rank: number;
  private readonly macro: Macro;
  private readonly opts: BuildOptions;

  constructor(macro: Macro, opts: BuildOptions = {}) {
    this.macro = macro;
    this.opts = opts;
    this.seedCounter = (opts.seed ?? 0) * 1000 + 1;
    this.rank = macro.input_shape.length - 1;
    if (this.rank !== 1 && this.rank !== 2) {
      throw new Error("input_shape must be [L, C] or [H, W, C]");
    }
  }

  private nextSeed(): number {
    return this.seedCounter++;
  }

  private init() {
    return tf.initializers.glorotUniform({ seed: this.nextSeed() });
  }

  private spatialOf(x: Sym): number[] {
    return x.shape.slice(1, 1 + this.rank) as number[];
  }

  private channelsOf(x: Sym): number {
    return x.shape[x.shape.length - 1] as number;
  }

  private norm(x: Sym): Sym {
    return tf.layers.batchNormalization({}).apply(x) as Sym;
  }

  private swish(x: Sym): Sym {
    return tf.layers.activation({ activation: "swish" }).apply(x) as Sym;
  }

  /** 1-D tensors ride through 2-D layers as (L, 1, C). */
  private as2d(x: Sym): Sym {
    const [len, ch] = [x.shape[1] as number, x.shape[2] as number];
    return tf.layers.reshape({ targetShape: [len, 1, ch] }).apply(x) as Sym;
  }

  private as1d(x: Sym): Sym {
    const [len, ch] = [x.shape[1] as number, x.shape[3] as number];
    return tf.layers.reshape({ targetShape: [len, ch] }).apply(x) as Sym;
  }

  private subsample(x: Sym, stride: number): Sym {
    if (stride === 1) return x;
    if (this.rank === 1) {
      return tf.layers.maxPooling1d({ poolSize: 1, strides: stride }).apply(x) as Sym;
    }
    return tf.layers.maxPooling2d({ poolSize: [1, 1], strides: [stride, stride] })
      .apply(x) as Sym;
  }

  private pointwise(x: Sym, filters: number): Sym {
    const conv = this.rank === 1
      ? tf.layers.conv1d({ filters, kernelSize: 1, padding: "same",
                           useBias: false, kernelInitializer: this.init() })
      : tf.layers.conv2d({ filters, kernelSize: 1, padding: "same",
                           useBias: false, kernelInitializer: this.init() });
    return this.norm(conv.apply(x) as Sym);
  }

  private conv(x: Sym, filters: number, kernel: number[], stride: number,
               dilation: number): Sym {
    // strided dilated convolution is illegal; dilate at stride 1, then subsample
    const convStride = dilation > 1 ? 1 : stride;
    let out: Sym;
    if (this.rank === 1) {
      out = tf.layers.conv1d({
        filters, kernelSize: kernel[0], strides: convStride, padding: "same",
        dilationRate: dilation, useBias: false, kernelInitializer: this.init(),
      }).apply(x) as Sym;
    } else {
      out = tf.layers.conv2d({
        filters, kernelSize: [kernel[0], kernel[1]],
        strides: [convStride, convStride], padding: "same",
        dilationRate: [dilation, dilation] as [number, number],
        useBias: false, kernelInitializer: this.init(),
      }).apply(x) as Sym;
    }
    if (dilation > 1 && stride > 1) out = this.subsample(out, stride);
    return this.swish(this.norm(out));
  }

  private dconv(x: Sym, filters: number, kernel: number[], stride: number,
                dilation: number): Sym {
    const convStride = dilation > 1 ? 1 : stride;
    let out: Sym;
    if (this.rank === 1) {
      const sep = tf.layers.separableConv2d({
        filters, kernelSize: [kernel[0], 1], strides: [convStride, 1],
        padding: "same", dilationRate: [dilation, 1] as [number, number],
        useBias: false, depthwiseInitializer: this.init(),
        pointwiseInitializer: this.init(),
      });
      out = this.as1d(sep.apply(this.as2d(x)) as Sym);
    } else {
      out = tf.layers.separableConv2d({
        filters, kernelSize: [kernel[0], kernel[1]],
        strides: [convStride, convStride], padding: "same",
        dilationRate: [dilation, dilation] as [number, number],
        useBias: false, depthwiseInitializer: this.init(),
        pointwiseInitializer: this.init(),
      }).apply(x) as Sym;
    }
    if (dilation > 1 && stride > 1) out = this.subsample(out, stride);
    return this.swish(this.norm(out));
  }

  private spatialSep(x: Sym, filters: number, kernel: number[], stride: number): Sym {
    const first = tf.layers.conv2d({
      filters, kernelSize: [kernel[0], kernel[1]], strides: [stride, stride],
      padding: "same", useBias: false, kernelInitializer: this.init(),
    }).apply(x) as Sym;
    const second = tf.layers.conv2d({
      filters, kernelSize: [kernel[2], kernel[3]], strides: 1, padding: "same",
      useBias: false, kernelInitializer: this.init(),
    }).apply(first) as Sym;
    return this.swish(this.norm(second));
  }

  private tconv(x: Sym, filters: number, kernel: number[], stride: number): Sym {
    let out: Sym;
    if (this.rank === 1) {
      const t = tf.layers.conv2dTranspose({
        filters, kernelSize: [kernel[0], 1], strides: 1, padding: "same",
        useBias: false, kernelInitializer: this.init(),
      });
      out = this.as1d(t.apply(this.as2d(x)) as Sym);
    } else {
      out = tf.layers.conv2dTranspose({
        filters, kernelSize: [kernel[0], kernel[1]], strides: 1,
        padding: "same", useBias: false, kernelInitializer: this.init(),
      }).apply(x) as Sym;
    }
    out = this.subsample(out, stride); // transpose convs cannot downsample
    return this.swish(this.norm(out));
  }

  private pool(x: Sym, op: Operator, stride: number): Sym {
    if (this.rank === 1) {
      const cfg = { poolSize: op.kernel[0], strides: stride, padding: "same" as const };
      return (op.kind === "maxpool"
        ? tf.layers.maxPooling1d(cfg)
        : tf.layers.averagePooling1d(cfg)).apply(x) as Sym;
    }
    const cfg = {
      poolSize: [op.kernel[0], op.kernel[1]] as [number, number],
      strides: [stride, stride] as [number, number], padding: "same" as const,
    };
    return (op.kind === "maxpool"
      ? tf.layers.maxPooling2d(cfg)
      : tf.layers.averagePooling2d(cfg)).apply(x) as Sym;
  }

  private recurrent(x: Sym, units: number, kind: "lstm" | "gru", stride: number): Sym {
    if (this.rank !== 1) {
      throw new Error(`${kind} requires series input`);
    }
    const strided = this.subsample(x, stride); // rnn runs over the strided sequence
    const layer = kind === "lstm"
      ? tf.layers.lstm({ units, returnSequences: true,
                         kernelInitializer: this.init(),
                         recurrentInitializer: this.init() })
      : tf.layers.gru({ units, returnSequences: true,
                        kernelInitializer: this.init(),
                        recurrentInitializer: this.init() });
    return layer.apply(strided) as Sym;
  }

  /** Apply one operator; convolutions and recurrent units project to the
   * target width themselves, identity/pooling keep their input width. */
  applyOperator(x: Sym, op: Operator, targetC: number, stride: number): Sym {
    switch (op.kind) {
      case "conv":
        return this.conv(x, targetC, op.kernel, stride, op.dilation);
      case "dconv":
        return this.dconv(x, targetC, op.kernel, stride, op.dilation);
      case "spatial_sep_conv":
        return this.spatialSep(x, targetC, op.kernel, stride);
      case "tconv":
        return this.tconv(x, targetC, op.kernel, stride);
      case "maxpool":
      case "avgpool":
        return this.pool(x, op, stride);
      case "identity":
        return this.subsample(x, stride);
      case "lstm":
      case "gru":
        return this.recurrent(x, targetC, op.kind, stride);
    }
  }

  /** Max pooling for leftover spatial mismatch, pointwise for width; added
   * only when a shape is effectively adjusted. */
  adjust(x: Sym, targetSpatial: number[], targetC: number): Sym {
    const spatial = this.spatialOf(x);
    const ratio = Math.round(spatial[0] / targetSpatial[0]);
    if (ratio > 1) x = this.subsample(x, ratio);
    if (this.channelsOf(x) !== targetC) x = this.pointwise(x, targetC);
    return x;
  }

  private maybeDropPath(x: Sym): Sym {
    if (!this.opts.dropPathRate) return x;
    return new DropPath(this.opts.dropPathRate).apply(x) as Sym;
  }

  buildCell(blocks: Block[], prev: Sym, prev2: Sym, targetC: number,
            reduction: boolean): Sym {
    const targetSpatial = this.spatialOf(prev).map(
      (s) => (reduction ? Math.ceil(s / 2) : s));
    const outputs: Sym[] = [];
    for (const blk of blocks) {
      const sides: Sym[] = [];
      for (const [ref, op] of [[blk.in1, blk.op1], [blk.in2, blk.op2]] as
           [number, Operator][]) {
        const src = ref === -1 ? prev : ref === -2 ? prev2 : outputs[ref];
        const stride = reduction && ref < 0 ? 2 : 1;
        let y = this.applyOperator(src, op, targetC, stride);
        y = this.adjust(y, targetSpatial, targetC);
        sides.push(this.maybeDropPath(y));
      }
      outputs.push(tf.layers.add({}).apply(sides) as Sym);
    }
    const unused = unusedBlocks(blocks);
    let cellOut = unused.length === 1
      ? outputs[unused[0]]
      : this.pointwise(
          tf.layers.concatenate({}).apply(unused.map((j) => outputs[j])) as Sym,
          targetC);
    if (this.macro.residual) {
      const lbs = usedLookbacks(blocks);
      if (lbs.length > 0) {
        const near = Math.max(...lbs) === -1 ? prev : prev2;
        let shortcut = near;
        const mismatch =
          this.channelsOf(near) !== targetC
          || this.spatialOf(near).some((s, i) => s !== targetSpatial[i]);
        if (mismatch) {
          // pooling + pointwise projection on any shape mismatch
          const ratio = Math.round(this.spatialOf(near)[0] / targetSpatial[0]);
          shortcut = this.pointwise(this.subsample(near, Math.max(1, ratio)),
                                    targetC);
        }
        cellOut = tf.layers.add({}).apply([cellOut, shortcut]) as Sym;
      }
    }
    return cellOut;
  }

  build(blocks: Block[]): tf.LayersModel {
    const macro = this.macro;
    const input = tf.layers.input({ shape: macro.input_shape });
    const stemConv = this.rank === 1
      ? tf.layers.conv1d({ filters: macro.F, kernelSize: 3, padding: "same",
                           useBias: false, kernelInitializer: this.init() })
      : tf.layers.conv2d({ filters: macro.F, kernelSize: 3, padding: "same",
                           useBias: false, kernelInitializer: this.init() });
    const stem = this.swish(this.norm(stemConv.apply(input) as Sym));

    const total = macro.M * (macro.N + 1);
    let prev = stem;
    let prev2 = stem;
    let secondary: Sym | null = null;
    const secondaryAt = Math.max(1, Math.floor((2 / 3) * total));
    for (let k = 1; k <= total; k++) {
      const motif = Math.floor((k - 1) / (macro.N + 1)) + 1;
      const width = macro.F * 2 ** (motif - 1);
      const reduction = k % (macro.N + 1) === 0;
      let out: Sym;
      if (blocks.length === 0) {
        out = prev; // the empty cell is a pass-through
      } else {
        out = this.buildCell(blocks, prev, prev2, width, reduction);
      }
      prev2 = prev;
      prev = out;
      if (this.opts.secondaryExit && k === secondaryAt) {
        secondary = prev;
      }
    }

    const head = (x: Sym, name: string): Sym => {
      const pooled = (this.rank === 1
        ? tf.layers.globalAveragePooling1d({})
        : tf.layers.globalAveragePooling2d({})).apply(x) as Sym;
      return tf.layers.dense({
        units: macro.num_classes, activation: "softmax", name,
        kernelInitializer: this.init(),
      }).apply(pooled) as Sym;
    };

    const outputs: Sym[] = [head(prev, "main_output")];
    if (secondary !== null) {
      outputs.push(head(secondary, "secondary_output"));
    }
    return tf.model({ inputs: input, outputs });
  }
}

export function buildModel(blocks: Block[], macro: Macro,
                           opts: BuildOptions = {}): tf.LayersModel {
  return new Builder(macro, opts).build(blocks);
}

export function trainableParams(model: tf.LayersModel): number {
  let total = 0;
  for (const w of model.trainableWeights) {
    let size = 1;
    for (const dim of w.shape) size *= dim ?? 1;
    total += size;
  }
  return total;
}
