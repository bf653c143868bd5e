/**
 * Client session for the augloop service.
 *
 * Transport failures (connection refused, timeouts, 5xx) are retried with
 * backoff; structured application errors (the service's HTTP 400 envelope)
 * are never retried and surface as ServiceApplicationError. The client
 * transports and reshapes only -- it never recomputes rewards or
 * advantages.
 */

import axios, { AxiosError, AxiosInstance } from 'axios';

import {
  AugmentResult,
  BatchRecord,
  BatchRecordSchema,
  EnvelopeSchema,
  GroupTrace,
  RewardBreakdown,
  RewardBreakdownSchema,
  RolloutGroup,
  TraceArrays,
} from './types.js';

export class ServiceApplicationError extends Error {
  constructor(public readonly code: string, message: string) {
    super(`[${code}] ${message}`);
    this.name = 'ServiceApplicationError';
  }
}

export class ServiceTransportError extends Error {
  constructor(message: string, public readonly attempts: number) {
    super(message);
    this.name = 'ServiceTransportError';
  }
}

export interface ClientOptions {
  endpoint?: string;
  authToken?: string;
  maxRetries?: number;
  retryDelayMs?: number;
  maxParallel?: number;
  timeoutMs?: number;
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

export class ClientSession {
  readonly endpoint: string;
  readonly maxRetries: number;
  readonly retryDelayMs: number;
  readonly maxParallel: number;
  private readonly http: AxiosInstance;
  private requestCounter = 0;

  constructor(options: ClientOptions = {}) {
    this.endpoint = (options.endpoint
      ?? process.env.AUGLOOP_SERVICE_ENDPOINT
      ?? 'http://127.0.0.1:8777').replace(/\/$/, '');
    this.maxRetries = options.maxRetries ?? 3;
    this.retryDelayMs = options.retryDelayMs ?? 200;
    this.maxParallel = options.maxParallel ?? 4;
    const token = options.authToken ?? process.env.AUGLOOP_SERVICE_TOKEN ?? '';
    this.http = axios.create({
      baseURL: this.endpoint,
      timeout: options.timeoutMs ?? 120_000,
      headers: token ? { 'x-augloop-auth': token } : {},
      // 400 carries the structured envelope; let it through to our handler.
      validateStatus: (s) => (s >= 200 && s < 300) || s === 400,
    });
  }

  private nextRequestId(): string {
    this.requestCounter += 1;
    return `cli-${Date.now()}-${this.requestCounter}`;
  }

  /** POST with transport-only retries; application errors raise at once. */
  private async post(path: string, body: Record<string, unknown>): Promise<unknown> {
    let lastError: unknown;
    for (let attempt = 1; attempt <= this.maxRetries; attempt++) {
      try {
        const resp = await this.http.post(path, body);
        const envelope = EnvelopeSchema.parse(resp.data);
        if (envelope.error !== null) {
          throw new ServiceApplicationError(envelope.error.code, envelope.error.message);
        }
        return envelope.result;
      } catch (err) {
        if (err instanceof ServiceApplicationError) throw err;
        if (err instanceof AxiosError && err.response !== undefined) {
          // A non-envelope HTTP failure below 500 is not transient.
          if (err.response.status < 500) throw err;
        }
        lastError = err;
        if (attempt < this.maxRetries) await sleep(this.retryDelayMs * attempt);
      }
    }
    throw new ServiceTransportError(
      `POST ${path} failed after ${this.maxRetries} attempts: ${String(lastError)}`,
      this.maxRetries,
    );
  }

  async health(): Promise<{ status: string; version: string }> {
    const resp = await this.http.get('/v1/health');
    return resp.data as { status: string; version: string };
  }

  async augment(
    imagePngB64: string,
    op: { kind: string; params: Record<string, unknown> },
    options: { originalPngB64?: string; maxPixels?: number; sourceGeneration?: number } = {},
  ): Promise<AugmentResult> {
    const result = await this.post('/v1/augment', {
      request_id: this.nextRequestId(),
      image_png_b64: imagePngB64,
      op,
      original_png_b64: options.originalPngB64 ?? null,
      max_pixels: options.maxPixels ?? 4_194_304,
      source_generation: options.sourceGeneration ?? 0,
    }) as Record<string, unknown>;
    return {
      imagePngB64: result.image_png_b64 as string | null,
      error: result.error as AugmentResult['error'],
      sourceGeneration: result.source_generation as number,
    };
  }

  async scoreRewards(
    trace: unknown,
    groundTruth: string,
    options: { maxCalls?: number; weights?: number[] } = {},
  ): Promise<RewardBreakdown> {
    const result = await this.post('/v1/rewards', {
      request_id: this.nextRequestId(),
      trace,
      ground_truth: groundTruth,
      max_calls: options.maxCalls ?? 8,
      weights: options.weights ?? null,
    });
    return RewardBreakdownSchema.parse(result);
  }

  /** Score many traces under a bounded request pool; results keep input order. */
  async scoreRewardsMany(
    items: { trace: unknown; groundTruth: string }[],
    options: { maxCalls?: number; weights?: number[] } = {},
  ): Promise<RewardBreakdown[]> {
    const results: RewardBreakdown[] = new Array(items.length);
    let cursor = 0;
    const worker = async () => {
      for (;;) {
        const index = cursor++;
        if (index >= items.length) return;
        results[index] = await this.scoreRewards(
          items[index].trace, items[index].groundTruth, options);
      }
    };
    const pool = Array.from(
      { length: Math.min(this.maxParallel, items.length || 1) }, () => worker());
    await Promise.all(pool);
    return results;
  }

  /**
   * Post rollout groups and reshape the returned grpo/v1 records into
   * trainer-aligned per-character arrays. The advantage math happens
   * server-side; this only transports and reshapes.
   */
  async scoreGroup(
    groups: RolloutGroup[],
    options: { beta?: number; mode?: 'zscore' | 'center' } = {},
  ): Promise<{ records: BatchRecord[]; arrays: TraceArrays[] }> {
    for (const group of groups) {
      if (group.traces.length < 2) {
        throw new ServiceApplicationError(
          'group_too_small', `group ${group.groupId} has fewer than 2 traces`);
      }
    }
    const result = await this.post('/v1/grpo/batch', {
      request_id: this.nextRequestId(),
      beta: options.beta ?? 0.01,
      mode: options.mode ?? 'zscore',
      groups: groups.map((g) => ({
        group_id: g.groupId,
        traces: g.traces.map((t: GroupTrace) => ({
          trace_id: t.traceId,
          trace: t.trace,
          reward: t.reward,
          logp_policy: t.logpPolicy ?? null,
          logp_ref: t.logpRef ?? null,
        })),
      })),
    }) as { records: unknown[] };
    const records = result.records.map((r) => BatchRecordSchema.parse(r));
    // Deterministic order regardless of transport quirks.
    records.sort((a, b) =>
      a.group_id.localeCompare(b.group_id) || a.trace_id.localeCompare(b.trace_id));
    return { records, arrays: records.map(reshapeRecord) };
  }
}

/** Expand one batch record into per-character mask and advantage arrays. */
export function reshapeRecord(record: BatchRecord): TraceArrays {
  const mask: boolean[] = [];
  const advantages: number[] = [];
  let text = '';
  for (const span of record.spans) {
    text += span.text;
    for (let i = 0; i < span.text.length; i++) {
      mask.push(span.in_loss);
      advantages.push(span.in_loss ? record.advantage : 0);
    }
  }
  return {
    groupId: record.group_id,
    traceId: record.trace_id,
    reward: record.reward,
    text,
    mask,
    advantages,
    tauLen: record.tau_len,
    weight: record.weight,
    kl: record.kl,
    beta: record.beta,
  };
}

export * from './types.js';
