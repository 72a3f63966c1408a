from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_dir', models.CharField(help_text='Run directory holding config, checkpoints and metrics', max_length=500, unique=True)),
                ('mode', models.CharField(choices=[('baseline', 'Baseline Transformer'), ('nat', 'Robust (natural noise)'), ('syn', 'Robust (synthetic noise)'), ('adv', 'Robust (adversarial)'), ('robust', 'Robust (clean two-step)')], default='robust', max_length=20)),
                ('seed', models.BigIntegerField(default=0)),
                ('config', models.JSONField(default=dict, help_text='Fully resolved run configuration')),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='running', max_length=20)),
                ('error', models.TextField(blank=True)),
                ('sweep', models.CharField(blank=True, help_text='Sweep name when the run is one grid point', max_length=200)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='EvaluationRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('checkpoint', models.CharField(max_length=500)),
                ('testset', models.CharField(max_length=500)),
                ('report_path', models.CharField(blank=True, max_length=500)),
                ('per', models.FloatField()),
                ('wer', models.FloatField()),
                ('total_words', models.PositiveIntegerField(default=0)),
                ('counts', models.JSONField(default=dict, help_text='Failure category histogram')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='evaluations', to='g2p_app.experimentrun')),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='EpochMetric',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('stage', models.PositiveSmallIntegerField()),
                ('epoch', models.PositiveIntegerField()),
                ('split', models.CharField(default='train', max_length=20)),
                ('loss', models.FloatField(blank=True, null=True)),
                ('adversarial_loss', models.FloatField(blank=True, null=True)),
                ('dev_per', models.FloatField(blank=True, null=True)),
                ('dev_wer', models.FloatField(blank=True, null=True)),
                ('steps', models.PositiveIntegerField(default=0)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='g2p_app.experimentrun')),
            ],
            options={
                'ordering': ['run', 'stage', 'epoch'],
                'unique_together': {('run', 'stage', 'epoch', 'split')},
            },
        ),
    ]
