/** Trace JSONL reading (the primary component's on-disk dataset format). */
import { readFileSync } from "node:fs";

export interface NetworkEvent {
  dt: number;
  size: number;
}

export interface Trace {
  id: string;
  label: "target" | "noise";
  prompt_id: string;
  events: NetworkEvent[];
  meta: Record<string, string>;
}

export function readDataset(path: string): Trace[] {
  const text = readFileSync(path, "utf-8");
  const traces: Trace[] = [];
  const seen = new Set<string>();
  let lineno = 0;
  for (const raw of text.split("\n")) {
    lineno += 1;
    const line = raw.trim();
    if (!line || line.startsWith("#")) continue;
    let obj: Trace;
    try {
      obj = JSON.parse(line) as Trace;
    } catch (err) {
      throw new Error(`${path}: line ${lineno}: malformed JSON (${err})`);
    }
    if (seen.has(obj.id)) {
      throw new Error(`${path}: line ${lineno}: duplicate trace id ${obj.id}`);
    }
    if (!obj.events?.length) {
      throw new Error(`${path}: line ${lineno}: trace has no events`);
    }
    for (const ev of obj.events) {
      if (!(ev.dt >= 0) || !(ev.size >= 1)) {
        throw new Error(`${path}: line ${lineno}: invalid event (${ev.dt}, ${ev.size})`);
      }
    }
    seen.add(obj.id);
    traces.push(obj);
  }
  return traces;
}

export function sizes(trace: Trace): number[] {
  return trace.events.map((e) => e.size);
}

export function gaps(trace: Trace): number[] {
  return trace.events.map((e) => e.dt);
}
