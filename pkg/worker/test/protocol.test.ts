import * as fs from "fs";
import * as path from "path";
import { describe, expect, it } from "vitest";
import { FRAMES, runTranscript } from "./transcript";

const GOLDEN = path.join(__dirname, "fixtures", "golden_transcript.txt");

describe("wire protocol", () => {
  it("replays the golden transcript byte-identically", async () => {
    const replies = await runTranscript();
    const text = replies.join("\n") + "\n";
    if (process.env.GOLDEN_UPDATE === "1" || !fs.existsSync(GOLDEN)) {
      fs.writeFileSync(GOLDEN, text);
    }
    expect(text).toBe(fs.readFileSync(GOLDEN, "utf-8"));
    expect(replies.length).toBe(FRAMES.length);
  }, 600_000);

  it("transcript covers replies, errors and the shutdown handshake", async () => {
    const replies = fs.readFileSync(GOLDEN, "utf-8").trim().split("\n")
      .map((line) => JSON.parse(line));
    expect(replies[0]).toMatchObject({ id: 1, ok: true });
    expect(typeof replies[0].worker).toBe("string");
    for (const idx of [1, 2]) {
      expect(replies[idx].accuracy).toBeGreaterThanOrEqual(0);
      expect(replies[idx].accuracy).toBeLessThanOrEqual(1);
      expect(replies[idx].time_s).toBeGreaterThan(0);
      expect(replies[idx].params).toBeGreaterThan(0);
    }
    expect(replies[3]).toMatchObject({ id: 4, ok: true });
    expect(replies[4].preds).toHaveLength(2);
    for (const p of replies[4].preds) {
      expect(p).toBeGreaterThanOrEqual(0);
      expect(p).toBeLessThanOrEqual(1);
    }
    expect(replies[5].error.code).toBe("bad_cmd");
    expect(replies[6].error.code).toBe("worker_error");
    expect(replies[7]).toMatchObject({ id: 8, ok: true });
  });

  it("numeric fields round-trip as nine-significant-digit decimals", () => {
    const replies = fs.readFileSync(GOLDEN, "utf-8").trim().split("\n")
      .map((line) => JSON.parse(line));
    for (const r of replies) {
      for (const key of ["accuracy", "time_s"]) {
        if (key in r) {
          expect(Number(r[key].toPrecision(9))).toBe(r[key]);
        }
      }
    }
  });
});
