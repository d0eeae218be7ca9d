import { createServer, IncomingMessage, Server, ServerResponse } from "node:http";
import { EmbedModel } from "./embedder.js";

export const MAX_BATCH = 256;
export const MAX_TEXT_LENGTH = 8192;

export interface EmbedService {
  server: Server;
  /** Flip /health from 503 to 200; called once the model is loaded. */
  markReady(): void;
}

interface ErrorBody {
  error: string;
}

function sendJson(response: ServerResponse, status: number, body: unknown): void {
  const payload = JSON.stringify(body);
  response.writeHead(status, {
    "Content-Type": "application/json",
    "Content-Length": Buffer.byteLength(payload),
  });
  response.end(payload);
}

function readBody(request: IncomingMessage): Promise<string> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    request.on("data", (chunk) => chunks.push(chunk));
    request.on("end", () => resolve(Buffer.concat(chunks).toString("utf8")));
    request.on("error", reject);
  });
}

function validateTexts(raw: string): string[] | ErrorBody | { overBatch: true } {
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    return { error: "request body is not valid JSON" };
  }
  if (typeof parsed !== "object" || parsed === null || !("texts" in parsed)) {
    return { error: "request must be an object with a 'texts' array" };
  }
  const texts = (parsed as { texts: unknown }).texts;
  if (!Array.isArray(texts) || texts.length === 0) {
    return { error: "'texts' must be a non-empty array" };
  }
  if (texts.length > MAX_BATCH) {
    return { overBatch: true };
  }
  for (const text of texts) {
    if (typeof text !== "string") {
      return { error: "'texts' entries must be strings" };
    }
    if (text.length > MAX_TEXT_LENGTH) {
      return { error: `texts are limited to ${MAX_TEXT_LENGTH} characters` };
    }
  }
  return texts as string[];
}

/**
 * Build the HTTP service around a model. Requests are stateless; the batch
 * size cap is the back-pressure mechanism. /health serves 503 until
 * markReady() is called, then 200 for the rest of the process lifetime.
 */
export function createService(model: EmbedModel): EmbedService {
  let ready = false;

  const server = createServer(async (request, response) => {
    const url = request.url ?? "/";

    if (request.method === "GET" && url === "/health") {
      if (!ready) {
        sendJson(response, 503, { status: "loading" });
        return;
      }
      sendJson(response, 200, { status: "ok", model: model.name, dim: model.dim });
      return;
    }

    if (request.method === "POST" && url === "/embed") {
      if (!ready) {
        sendJson(response, 503, { error: "model not loaded" });
        return;
      }
      const raw = await readBody(request);
      const validated = validateTexts(raw);
      if (Array.isArray(validated)) {
        sendJson(response, 200, {
          model: model.name,
          dim: model.dim,
          embeddings: model.embed(validated),
        });
      } else if ("overBatch" in validated) {
        sendJson(response, 413, { error: `batches are limited to ${MAX_BATCH} texts` });
      } else {
        sendJson(response, 400, validated);
      }
      return;
    }

    sendJson(response, 404, { error: `no route for ${request.method} ${url}` });
  });

  return {
    server,
    markReady() {
      ready = true;
    },
  };
}
