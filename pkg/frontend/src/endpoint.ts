/**
 * Client for a vision-language endpoint that answers an instruction about an
 * image and returns the decoder token features of the answer.
 *
 * Wire format: POST <url> with JSON
 *     { "sample_id": string, "instruction": string, "image_base64": string }
 * expecting 200 with JSON
 *     { "tokens": number[][] }    // one feature vector per decoder token
 *
 * The endpoint is a local model server or remote service; this package never
 * links an LLM runtime itself.
 */

export interface EndpointConfig {
  url: string;
  /** Total attempts per request before giving up (default 3). */
  attempts?: number;
  /** First retry delay; doubles on each further retry (default 250 ms). */
  backoffMs?: number;
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

export class EndpointClient {
  private readonly attempts: number;
  private readonly backoffMs: number;

  constructor(private readonly config: EndpointConfig) {
    if (!config.url) {
      throw new Error("endpoint url is required");
    }
    this.attempts = config.attempts ?? 3;
    this.backoffMs = config.backoffMs ?? 250;
  }

  async tokenFeatures(
    sampleId: string,
    instruction: string,
    imagePng: Buffer
  ): Promise<Float64Array[]> {
    let lastError: unknown;
    for (let attempt = 0; attempt < this.attempts; attempt++) {
      if (attempt > 0) {
        await sleep(this.backoffMs * 2 ** (attempt - 1));
      }
      try {
        const res = await fetch(this.config.url, {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify({
            sample_id: sampleId,
            instruction,
            image_base64: imagePng.toString("base64"),
          }),
        });
        if (!res.ok) {
          throw new Error(`endpoint returned HTTP ${res.status}`);
        }
        const body = (await res.json()) as { tokens?: number[][] };
        if (!Array.isArray(body.tokens) || body.tokens.length === 0) {
          throw new Error("endpoint response has no 'tokens' array");
        }
        return body.tokens.map((row) => Float64Array.from(row));
      } catch (err) {
        lastError = err;
      }
    }
    throw new Error(
      `endpoint failed for sample '${sampleId}' after ${this.attempts} attempts: ${lastError}`
    );
  }
}
