/**
 * Cell text format and operator tokens, mirroring the engine's encoding:
 * "[(-2, 'gru', -1, '21 conv');(0, '3x3 conv', -1, 'identity')]"
 */

export type OperatorKind =
  | "identity" | "conv" | "dconv" | "spatial_sep_conv" | "tconv"
  | "maxpool" | "avgpool" | "lstm" | "gru";

export interface Operator {
  kind: OperatorKind;
  kernel: number[];
  dilation: number;
  token: string;
}

export interface Block {
  in1: number;
  op1: Operator;
  in2: number;
  op2: Operator;
}

const SEP_CONV = /^(\d+)x(\d+)-(\d+)x(\d+) conv$/;
const CONV_2D = /^(\d+)x(\d+)(?::(\d+)dr)? (conv|dconv)$/;
const CONV_1D = /^(\d+)(?::(\d+)dr)? (conv|dconv)$/;
const TCONV_2D = /^(\d+)x(\d+) tconv$/;
const TCONV_1D = /^(\d+) tconv$/;
const POOL_2D = /^(\d+)x(\d+) (maxpool|avgpool)$/;
const POOL_1D = /^(\d+) (maxpool|avgpool)$/;

export function parseOperator(token: string): Operator {
  const t = token.trim().replace(/\s+/g, " ");
  if (t === "identity") return { kind: "identity", kernel: [], dilation: 1, token: t };
  if (t.toLowerCase() === "lstm" || t.toLowerCase() === "gru") {
    const k = t.toLowerCase() as "lstm" | "gru";
    return { kind: k, kernel: [], dilation: 1, token: k };
  }
  let m = t.match(SEP_CONV);
  if (m) {
    return { kind: "spatial_sep_conv", kernel: m.slice(1, 5).map(Number), dilation: 1, token: t };
  }
  m = t.match(CONV_2D);
  if (m) {
    return { kind: m[4] as OperatorKind, kernel: [Number(m[1]), Number(m[2])],
             dilation: m[3] ? Number(m[3]) : 1, token: t };
  }
  m = t.match(CONV_1D);
  if (m) {
    return { kind: m[3] as OperatorKind, kernel: [Number(m[1])],
             dilation: m[2] ? Number(m[2]) : 1, token: t };
  }
  m = t.match(TCONV_2D);
  if (m) return { kind: "tconv", kernel: [Number(m[1]), Number(m[2])], dilation: 1, token: t };
  m = t.match(TCONV_1D);
  if (m) return { kind: "tconv", kernel: [Number(m[1])], dilation: 1, token: t };
  m = t.match(POOL_2D);
  if (m) return { kind: m[3] as OperatorKind, kernel: [Number(m[1]), Number(m[2])], dilation: 1, token: t };
  m = t.match(POOL_1D);
  if (m) return { kind: m[2] as OperatorKind, kernel: [Number(m[1])], dilation: 1, token: t };
  throw new Error(`unknown operator token: ${token}`);
}

const BLOCK_RE = /\(\s*(-?\d+)\s*,\s*'([^']*)'\s*,\s*(-?\d+)\s*,\s*'([^']*)'\s*\)/g;

export function parseCell(text: string): Block[] {
  const t = text.trim();
  if (!t.startsWith("[") || !t.endsWith("]")) {
    throw new Error(`cell text must be bracketed: ${text}`);
  }
  const inner = t.slice(1, -1).trim();
  if (!inner) return [];
  const blocks: Block[] = [];
  for (const m of inner.matchAll(BLOCK_RE)) {
    blocks.push({
      in1: Number(m[1]), op1: parseOperator(m[2]),
      in2: Number(m[3]), op2: parseOperator(m[4]),
    });
  }
  if (blocks.length === 0) throw new Error(`no block tuples in: ${text}`);
  blocks.forEach((b, j) => {
    for (const ref of [b.in1, b.in2]) {
      if (ref >= j) throw new Error(`block ${j} references ${ref}`);
    }
  });
  return blocks;
}

/** Blocks whose output no other block consumes (concatenated into the cell output). */
export function unusedBlocks(blocks: Block[]): number[] {
  const consumed = new Set<number>();
  for (const b of blocks) {
    if (b.in1 >= 0) consumed.add(b.in1);
    if (b.in2 >= 0) consumed.add(b.in2);
  }
  return blocks.map((_, j) => j).filter((j) => !consumed.has(j));
}

export function usedLookbacks(blocks: Block[]): number[] {
  const lbs = new Set<number>();
  for (const b of blocks) {
    if (b.in1 < 0) lbs.add(b.in1);
    if (b.in2 < 0) lbs.add(b.in2);
  }
  return [...lbs].sort((a, b) => a - b);
}
