import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';

import { describe, expect, it } from 'vitest';

import {
  ClientSession,
  ServiceApplicationError,
  ServiceTransportError,
  reshapeRecord,
} from '../src/client.js';
import type { BatchRecord, RolloutGroup } from '../src/types.js';

const here = dirname(fileURLToPath(import.meta.url));
const FIXTURES = join(here, '..', '..', 'tests', 'fixtures');

const endpoint = () => process.env.AUGLOOP_SERVICE_ENDPOINT ?? 'http://127.0.0.1:8791';

function loadJson(name: string): any {
  return JSON.parse(readFileSync(join(FIXTURES, name), 'utf-8'));
}

function loadGoldenBatch(): BatchRecord[] {
  return readFileSync(join(FIXTURES, 'golden_batch.jsonl'), 'utf-8')
    .trim()
    .split('\n')
    .map((line) => JSON.parse(line));
}

function requestToGroups(request: any): RolloutGroup[] {
  return request.groups.map((g: any) => ({
    groupId: g.group_id,
    traces: g.traces.map((t: any) => ({
      traceId: t.trace_id,
      trace: t.trace,
      reward: t.reward,
      logpPolicy: t.logp_policy ?? undefined,
      logpRef: t.logp_ref ?? undefined,
    })),
  }));
}

describe('health', () => {
  it('reports ok', async () => {
    const session = new ClientSession({ endpoint: endpoint() });
    const health = await session.health();
    expect(health.status).toBe('ok');
  });
});

describe('golden batch parity', () => {
  it('reproduces the frozen batch field-by-field within 1e-9', async () => {
    const session = new ClientSession({ endpoint: endpoint() });
    const request = loadJson('golden_batch_request.json');
    const golden = loadGoldenBatch();

    const { records, arrays } = await session.scoreGroup(requestToGroups(request), {
      beta: request.beta,
      mode: request.mode,
    });

    expect(records.length).toBe(golden.length);
    for (let i = 0; i < golden.length; i++) {
      const got = records[i];
      const want = golden[i];
      expect(got.group_id).toBe(want.group_id);
      expect(got.trace_id).toBe(want.trace_id);
      expect(got.tau_len).toBe(want.tau_len);
      expect(got.total_tau_len).toBe(want.total_tau_len);
      expect(got.spans).toEqual(want.spans);
      expect(Math.abs(got.reward - want.reward)).toBeLessThanOrEqual(1e-9);
      expect(Math.abs(got.advantage - want.advantage)).toBeLessThanOrEqual(1e-9);
      expect(Math.abs(got.weight - want.weight)).toBeLessThanOrEqual(1e-9);
      expect(Math.abs(got.beta - want.beta)).toBeLessThanOrEqual(1e-9);
      if (want.kl === null) {
        expect(got.kl).toBeNull();
      } else {
        expect(got.kl).not.toBeNull();
        expect(got.kl!.length).toBe(want.kl.length);
        for (let j = 0; j < want.kl.length; j++) {
          expect(Math.abs(got.kl![j] - want.kl[j])).toBeLessThanOrEqual(1e-9);
        }
      }
      // Reshaped arrays stay consistent with the record.
      const shaped = arrays[i];
      expect(shaped.text).toBe(want.spans.map((s: any) => s.text).join(''));
      expect(shaped.mask.filter(Boolean).length).toBe(want.tau_len);
      const advantageMass = shaped.advantages.reduce((a, b) => a + b, 0);
      expect(Math.abs(advantageMass - want.advantage * want.tau_len))
        .toBeLessThanOrEqual(1e-6);
    }
  });

  it('yields zero advantages for an equal-reward group', async () => {
    const session = new ClientSession({ endpoint: endpoint() });
    const trace = loadJson('golden_trace_b.json');
    const group: RolloutGroup = {
      groupId: 'flat',
      traces: [1, 2, 3, 4].map((i) => ({
        traceId: `t${i}`,
        trace,
        reward: 1.25,
      })),
    };
    const { records, arrays } = await session.scoreGroup([group]);
    expect(records.length).toBe(4);
    for (const record of records) expect(record.advantage).toBe(0);
    for (const shaped of arrays) {
      expect(shaped.advantages.every((a) => a === 0)).toBe(true);
    }
  });
});

describe('reward scoring through the client path', () => {
  it('matches the frozen library breakdown within 1e-12', async () => {
    const session = new ClientSession({ endpoint: endpoint() });
    const trace = loadJson('golden_trace_b.json');
    const golden = loadJson('golden_rewards.json');
    const breakdown = await session.scoreRewards(trace, golden.ground_truth, {
      maxCalls: golden.max_calls,
    });
    for (const key of ['r_vqa', 'r_fmt', 'r_cst', 'r_api', 'r_suc', 'total'] as const) {
      expect(Math.abs(breakdown[key] - golden.breakdown[key]))
        .toBeLessThanOrEqual(1e-12);
    }
  });

  it('runs a bounded-concurrency batch in input order', async () => {
    const session = new ClientSession({ endpoint: endpoint(), maxParallel: 2 });
    const trace = loadJson('golden_trace_b.json');
    const golden = loadJson('golden_rewards.json');
    const items = [
      { trace, groundTruth: golden.ground_truth },
      { trace, groundTruth: 'definitely wrong' },
      { trace, groundTruth: golden.ground_truth },
    ];
    const results = await session.scoreRewardsMany(items);
    expect(results[0].r_vqa).toBe(1);
    expect(results[1].r_vqa).toBe(0);
    expect(results[2].r_vqa).toBe(1);
  });
});

describe('error policy', () => {
  it('raises application errors without retrying', async () => {
    const session = new ClientSession({ endpoint: endpoint() });
    await expect(
      session.scoreRewards({ schema_version: 'bogus' }, 'x'),
    ).rejects.toBeInstanceOf(ServiceApplicationError);
  });

  it('rejects undersized groups client-side', async () => {
    const session = new ClientSession({ endpoint: endpoint() });
    const trace = loadJson('golden_trace_a.json');
    await expect(
      session.scoreGroup([{ groupId: 'g', traces: [{ traceId: 't', trace, reward: 1 }] }]),
    ).rejects.toBeInstanceOf(ServiceApplicationError);
  });

  it('retries transport failures then raises', async () => {
    const session = new ClientSession({
      endpoint: 'http://127.0.0.1:1',
      maxRetries: 2,
      retryDelayMs: 10,
      timeoutMs: 500,
    });
    await expect(session.scoreRewards({}, 'x'))
      .rejects.toBeInstanceOf(ServiceTransportError);
  });
});

describe('reshape', () => {
  it('broadcasts the advantage over in-loss positions only', () => {
    const record: BatchRecord = {
      schema_version: 'grpo/v1',
      group_id: 'g',
      trace_id: 't',
      reward: 1,
      advantage: 0.5,
      spans: [
        { text: 'abc', in_loss: true },
        { text: 'XY', in_loss: false },
        { text: 'z', in_loss: true },
      ],
      tau_len: 4,
      total_tau_len: 4,
      weight: 1,
      kl: null,
      beta: 0.01,
    };
    const shaped = reshapeRecord(record);
    expect(shaped.text).toBe('abcXYz');
    expect(shaped.mask).toEqual([true, true, true, false, false, true]);
    expect(shaped.advantages).toEqual([0.5, 0.5, 0.5, 0, 0, 0.5]);
  });
});
