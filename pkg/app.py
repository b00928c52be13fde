import logging

import gradio as gr

from qmem_lab.handlers import (
    calibrate_and_mitigate_handler,
    generate_dataset_handler,
    preset_names,
    run_experiment_handler,
)

logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

GRAPHS = preset_names('graphs')
NOISE = preset_names('noise')
CONFIGS = preset_names('configs')

# --- UI Definition ---
with gr.Blocks(title="QMEM Lab") as demo:
    gr.Markdown("# Measurement-Error Mitigation Lab")
    gr.Markdown("Simulate noisy readout, calibrate linear inversion, and run mitigation experiments.")

    with gr.Tab("Dataset"):
        with gr.Row():
            with gr.Column(scale=1):
                gr.Markdown("### 1. Device")
                gen_graph = gr.Dropdown(label="Coupling Graph", choices=GRAPHS, value="line-7")
                gen_noise = gr.Dropdown(label="Noise Model", choices=NOISE, value="realistic-7q")

                gr.Markdown("### 2. Sampling")
                gen_samples = gr.Number(label="Samples", value=1000, precision=0)
                gen_shots = gr.Number(label="Shots (0 = exact)", value=32000, precision=0)
                gen_seed = gr.Number(label="Seed", value=1234, precision=0)
                gen_btn = gr.Button("Generate Dataset", variant="primary")

            with gr.Column(scale=1):
                gr.Markdown("### 3. Result")
                gen_status = gr.Textbox(label="Status", interactive=False)
                gen_download = gr.File(label="Download Dataset (JSONL)")
                gen_preview = gr.JSON(label="Preview (first 3 samples)")

        gen_btn.click(
            fn=generate_dataset_handler,
            inputs=[gen_graph, gen_noise, gen_samples, gen_shots, gen_seed],
            outputs=[gen_download, gen_preview, gen_status],
        )

    with gr.Tab("Calibrate & Mitigate"):
        with gr.Row():
            with gr.Column(scale=1):
                gr.Markdown("### 1. Import")
                li_file = gr.File(label="Upload Dataset", file_types=[".jsonl"])
                li_graph = gr.Dropdown(label="Coupling Graph", choices=GRAPHS, value="line-7")
                li_noise = gr.Dropdown(label="Noise Model", choices=NOISE, value="realistic-7q")

                gr.Markdown("### 2. Calibration")
                li_shots = gr.Number(label="Calibration Shots (0 = exact)", value=32000, precision=0)
                li_seed = gr.Number(label="Seed", value=1234, precision=0)
                li_btn = gr.Button("Calibrate and Mitigate", variant="primary")

            with gr.Column(scale=1):
                gr.Markdown("### 3. Scores")
                li_status = gr.Textbox(label="Status", interactive=False)
                li_table = gr.Dataframe(label="Test-set distances", interactive=False)

        li_btn.click(
            fn=calibrate_and_mitigate_handler,
            inputs=[li_file, li_graph, li_noise, li_shots, li_seed],
            outputs=[li_table, li_status],
        )

    with gr.Tab("Experiment"):
        with gr.Row():
            with gr.Column(scale=1):
                gr.Markdown("### 1. Config")
                exp_preset = gr.Dropdown(label="Config Preset", choices=CONFIGS, value="smoke-7q")
                exp_file = gr.File(label="...or upload a YAML config", file_types=[".yaml", ".yml"])

                gr.Markdown("### 2. Overrides")
                exp_epochs = gr.Number(label="Epochs (blank = config value)", precision=0)
                exp_reps = gr.Number(label="Repetitions (blank = config value)", precision=0)
                exp_btn = gr.Button("Run Experiment", variant="primary")

            with gr.Column(scale=1):
                gr.Markdown("### 3. Report")
                exp_status = gr.Textbox(label="Status", interactive=False)
                exp_summary = gr.Dataframe(label="Summary", interactive=False)
                exp_download = gr.File(label="Download Results (CSV)")

        exp_btn.click(
            fn=run_experiment_handler,
            inputs=[exp_file, exp_preset, exp_epochs, exp_reps],
            outputs=[exp_summary, exp_download, exp_status],
        )


if __name__ == "__main__":
    demo.launch()
