import { readFileSync } from "node:fs";

import type { FetchLike } from "../src/api";

export interface RecordedEntry {
  request: { method: string; path: string; body: unknown };
  response: { status: number; text: string };
}

/** Replay a recorded request/response script as a fetch implementation.
 *
 * Each call must match the next recorded request (method, path, and exact
 * body after JSON round-trip); the response is returned with the exact byte
 * payload the live server produced.
 */
export function fixtureFetch(entries: RecordedEntry[]): {
  fetch: FetchLike;
  done: () => void;
} {
  let i = 0;
  const impl: FetchLike = async (url, init) => {
    if (i >= entries.length) {
      throw new Error(`unexpected extra request: ${init?.method ?? "GET"} ${url}`);
    }
    const entry = entries[i];
    i += 1;
    const method = init?.method ?? "GET";
    if (method !== entry.request.method || url !== entry.request.path) {
      throw new Error(
        `request ${i - 1} mismatch: got ${method} ${url}, `
        + `expected ${entry.request.method} ${entry.request.path}`,
      );
    }
    const got = init?.body ? JSON.parse(init.body as string) : null;
    if (JSON.stringify(got) !== JSON.stringify(entry.request.body)) {
      throw new Error(
        `request ${i - 1} body mismatch at ${url}:\n`
        + `got      ${JSON.stringify(got)}\n`
        + `expected ${JSON.stringify(entry.request.body)}`,
      );
    }
    return new Response(entry.response.text, {
      status: entry.response.status,
      headers: { "content-type": "application/json" },
    });
  };
  return {
    fetch: impl,
    done: () => {
      if (i !== entries.length) {
        throw new Error(`script not fully replayed: ${i}/${entries.length} requests`);
      }
    },
  };
}

export function loadFixture(name: string): RecordedEntry[] {
  return JSON.parse(
    readFileSync(new URL(`./fixtures/${name}`, import.meta.url), "utf8"),
  ) as RecordedEntry[];
}
