/**
 * Wire schemas for the augloop service, validated with zod so a drifting
 * server fails loudly instead of producing silently wrong arrays.
 */

import { z } from 'zod';

export const ServiceErrorSchema = z.object({
  code: z.string(),
  message: z.string(),
});

export const EnvelopeSchema = z.object({
  request_id: z.string(),
  result: z.unknown().nullable(),
  error: ServiceErrorSchema.nullable(),
});

export const RewardBreakdownSchema = z.object({
  r_vqa: z.number(),
  r_fmt: z.number(),
  r_cst: z.number(),
  r_api: z.number(),
  r_suc: z.number(),
  total: z.number(),
});
export type RewardBreakdown = z.infer<typeof RewardBreakdownSchema>;

export const SpanSchema = z.object({
  text: z.string(),
  in_loss: z.boolean(),
});

export const BatchRecordSchema = z.object({
  schema_version: z.literal('grpo/v1'),
  group_id: z.string(),
  trace_id: z.string(),
  reward: z.number(),
  advantage: z.number(),
  spans: z.array(SpanSchema),
  tau_len: z.number().int(),
  total_tau_len: z.number().int(),
  weight: z.number(),
  kl: z.array(z.number()).nullable(),
  beta: z.number(),
});
export type BatchRecord = z.infer<typeof BatchRecordSchema>;

export interface GroupTrace {
  traceId: string;
  trace: unknown; // an episode/v1 record, passed through untouched
  reward: number;
  logpPolicy?: number[];
  logpRef?: number[];
}

export interface RolloutGroup {
  groupId: string;
  traces: GroupTrace[];
}

/** Per-trace arrays a trainer consumes directly. */
export interface TraceArrays {
  groupId: string;
  traceId: string;
  reward: number;
  /** Full rendered trace text (all spans concatenated). */
  text: string;
  /** One flag per character of `text`: true when the position is in-loss. */
  mask: boolean[];
  /** One value per character: the trace advantage on in-loss positions, 0 elsewhere. */
  advantages: number[];
  tauLen: number;
  weight: number;
  kl: number[] | null;
  beta: number;
}

export interface AugmentResult {
  imagePngB64: string | null;
  error: { code: string; message: string } | null;
  sourceGeneration: number;
}
